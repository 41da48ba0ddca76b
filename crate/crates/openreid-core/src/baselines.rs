//! Comparison algorithms: online 1-NN matching and offline batch clustering.
//!
//! These exist to be beaten. The online nearest-neighbor rule accepts a probe
//! on the strength of a single stored descriptor, which makes it cheap and
//! brittle; the offline algorithms give a batch-mode reference point.

use std::collections::BTreeSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::descriptor::{distance_unchecked, Descriptor, DescriptorError};
use crate::gallery::GalleryView;
use crate::matcher::{MatchDecision, MatchError, MatchOutcome, NeighborStats};
use crate::types::IdentityId;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("k = {k} exceeds point count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error(transparent)]
    Dimension(#[from] DescriptorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Matches a probe to the identity owning the globally nearest stored
/// descriptor, if that descriptor sits within `t_d`.
///
/// Distance ties fall to the smaller identity. The decision carries a single
/// nearest-neighbor statistic instead of per-cluster support.
pub fn online_1nn_match(
    probe: &Descriptor,
    view: &GalleryView,
    excluded: &BTreeSet<IdentityId>,
    t_d: f64,
) -> Result<MatchDecision, MatchError> {
    if let Some(dim) = view.dim() {
        if probe.dim() != dim {
            return Err(MatchError::Dimension(DescriptorError::DimensionMismatch {
                expected: dim,
                actual: probe.dim(),
            }));
        }
    }
    let mut nearest: Option<(f64, IdentityId)> = None;
    for cluster in view.clusters() {
        if excluded.contains(&cluster.id) {
            continue;
        }
        for d in &cluster.descriptors {
            let dist = distance_unchecked(probe, d);
            // Strict less-than keeps the first owner on exact ties; clusters
            // arrive in ascending id order.
            if nearest.map_or(true, |(best, _)| dist < best) {
                nearest = Some((dist, cluster.id));
            }
        }
    }
    Ok(match nearest {
        Some((dist, id)) if dist <= t_d => MatchDecision {
            outcome: MatchOutcome::Matched(id),
            stats: vec![NeighborStats {
                identity: id,
                count: 1,
                mean_distance: Some(dist),
            }],
        },
        Some((_, id)) => MatchDecision {
            outcome: MatchOutcome::NoMatch,
            stats: vec![NeighborStats {
                identity: id,
                count: 0,
                mean_distance: None,
            }],
        },
        None => MatchDecision {
            outcome: MatchOutcome::NoMatch,
            stats: Vec::new(),
        },
    })
}

/// Per-point result of an offline clustering pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Cluster(usize),
    Noise,
}

/// A batch labeling: cluster indices partition the non-noise points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineLabeling {
    pub labels: Vec<PointLabel>,
}

impl OfflineLabeling {
    pub fn n_clusters(&self) -> usize {
        self.labels
            .iter()
            .filter_map(|l| match l {
                PointLabel::Cluster(c) => Some(c + 1),
                PointLabel::Noise => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn noise_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, PointLabel::Noise))
            .count()
    }

    /// Relabels clusters by order of first appearance, so two labelings of
    /// the same partition compare equal regardless of numbering.
    pub fn canonicalized(&self) -> OfflineLabeling {
        let mut remap: Vec<Option<usize>> = vec![None; self.labels.len()];
        let mut next = 0usize;
        let labels = self
            .labels
            .iter()
            .map(|l| match l {
                PointLabel::Noise => PointLabel::Noise,
                PointLabel::Cluster(c) => {
                    let slot = remap.get_mut(*c).expect("cluster index in range");
                    let mapped = *slot.get_or_insert_with(|| {
                        let v = next;
                        next += 1;
                        v
                    });
                    PointLabel::Cluster(mapped)
                }
            })
            .collect();
        OfflineLabeling { labels }
    }

    /// CSV export: one `index,label` row per point, `noise` for noise.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), BaselineError> {
        writeln!(w, "point,label")?;
        for (i, l) in self.labels.iter().enumerate() {
            match l {
                PointLabel::Cluster(c) => writeln!(w, "{i},{c}")?,
                PointLabel::Noise => writeln!(w, "{i},noise")?,
            }
        }
        Ok(())
    }
}

/// Classic density-based batch clustering under the Euclidean metric.
///
/// A point with at least `min_pts` neighbors within `eps` (itself included)
/// is a core point; clusters grow by density reachability from core points,
/// and whatever remains unreachable is noise. Border points attach to the
/// first cluster that discovers them.
pub fn offline_dbscan(points: &[Descriptor], eps: f64, min_pts: usize) -> OfflineLabeling {
    debug_assert!(eps > 0.0 && min_pts >= 1);
    let n = points.len();
    let range_query = |p: usize| -> Vec<usize> {
        (0..n)
            .filter(|&q| distance_unchecked(&points[p], &points[q]) <= eps)
            .collect()
    };

    let mut labels: Vec<Option<PointLabel>> = vec![None; n];
    let mut next_cluster = 0usize;
    for p in 0..n {
        if labels[p].is_some() {
            continue;
        }
        let neighbors = range_query(p);
        if neighbors.len() < min_pts {
            labels[p] = Some(PointLabel::Noise);
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[p] = Some(PointLabel::Cluster(cluster));
        let mut queue: Vec<usize> = neighbors;
        let mut head = 0;
        while head < queue.len() {
            let q = queue[head];
            head += 1;
            match labels[q] {
                Some(PointLabel::Noise) => {
                    // Noise in reach of a core point becomes a border point.
                    labels[q] = Some(PointLabel::Cluster(cluster));
                }
                Some(PointLabel::Cluster(_)) => continue,
                None => {
                    labels[q] = Some(PointLabel::Cluster(cluster));
                    let q_neighbors = range_query(q);
                    if q_neighbors.len() >= min_pts {
                        queue.extend(q_neighbors);
                    }
                }
            }
        }
    }
    OfflineLabeling {
        labels: labels
            .into_iter()
            .map(|l| l.expect("every point labeled"))
            .collect(),
    }
}

/// Lloyd iteration with seeded k-means++ initialization.
///
/// Runs until labels stop changing or `max_iter` passes. Empty clusters keep
/// their previous center. Fully determined by `seed`.
pub fn offline_kmeans(
    points: &[Descriptor],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<OfflineLabeling, BaselineError> {
    let n = points.len();
    if k > n {
        return Err(BaselineError::KTooLarge { k, n });
    }
    if k == 0 || n == 0 {
        return Ok(OfflineLabeling { labels: Vec::new() });
    }
    let dim = points[0].dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let as_f64 = |d: &Descriptor| -> Vec<f64> { d.values().iter().map(|&v| f64::from(v)).collect() };
    let dist2 = |c: &[f64], d: &Descriptor| -> f64 {
        c.iter()
            .zip(d.values())
            .map(|(&a, &b)| {
                let diff = a - f64::from(b);
                diff * diff
            })
            .sum()
    };

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(as_f64(&points[rng.gen_range(0..n)]));
    let mut best_d2: Vec<f64> = points.iter().map(|p| dist2(&centers[0], p)).collect();
    while centers.len() < k {
        let total: f64 = best_d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best_d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining mass is on duplicate points; take the first one
            // not yet chosen as a center.
            (0..n)
                .find(|&i| {
                    centers
                        .iter()
                        .all(|c| c.iter().zip(points[i].values()).any(|(&a, &b)| a != f64::from(b)))
                })
                .unwrap_or(0)
        };
        let center = as_f64(&points[chosen]);
        for (slot, p) in best_d2.iter_mut().zip(points) {
            *slot = slot.min(dist2(&center, p));
        }
        centers.push(center);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (c, center) in centers.iter().enumerate() {
                let d2 = dist2(center, p);
                if d2 < best.0 {
                    best = (d2, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, &v) in sums[labels[i]].iter_mut().zip(p.values()) {
                *s += f64::from(v);
            }
        }
        for (c, (sum, &count)) in sums.iter().zip(counts.iter()).enumerate() {
            if count > 0 {
                for (slot, &s) in centers[c].iter_mut().zip(sum) {
                    *slot = s / count as f64;
                }
            }
        }
    }
    Ok(OfflineLabeling {
        labels: labels.into_iter().map(PointLabel::Cluster).collect(),
    })
}

/// Majority-mapping accuracy: each predicted cluster adopts its most common
/// truth label, noise always counts as wrong.
pub fn clustering_accuracy(labeling: &OfflineLabeling, truth: &[&str]) -> f64 {
    debug_assert_eq!(labeling.labels.len(), truth.len());
    let n = labeling.labels.len();
    if n == 0 {
        return 1.0;
    }
    use std::collections::BTreeMap;
    let mut per_cluster: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (l, &t) in labeling.labels.iter().zip(truth) {
        if let PointLabel::Cluster(c) = l {
            *per_cluster.entry(*c).or_default().entry(t).or_default() += 1;
        }
    }
    let mut correct = 0usize;
    for counts in per_cluster.values() {
        // BTreeMap order makes the majority pick deterministic on ties.
        correct += counts.values().copied().max().unwrap_or(0);
    }
    correct as f64 / n as f64
}
