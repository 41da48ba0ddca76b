//! Online density-based matching against the gallery.
//!
//! A probe matches an identity when that identity's cluster holds enough
//! stored descriptors within the distance threshold. The winning identity is
//! the one with the most such neighbors; ties fall to the smaller mean
//! neighbor distance, then to the smaller id, so every decision is total and
//! reproducible. Within one frame each identity can be claimed at most once:
//! an identity assigned to an earlier probe is invisible to later probes of
//! the same frame.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::descriptor::{distance_unchecked, Descriptor, DescriptorError};
use crate::gallery::{ClusterSnapshot, Gallery, GalleryError, GalleryView};
use crate::types::{FrameBatch, IdentityId};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Distance threshold tuned for fc7-style embeddings of frontal faces.
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 1.215;
/// Neighbor count a cluster must reach to accept a probe.
pub const DEFAULT_NEIGHBOR_THRESHOLD: usize = 3;

/// Below this many stored descriptors a parallel scan costs more than it
/// saves; the sequential path is used regardless of the feature flag.
#[cfg(feature = "parallel")]
const PARALLEL_SCAN_CUTOFF: usize = 512;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("invalid matcher config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dimension(#[from] DescriptorError),
    #[error(transparent)]
    Gallery(#[from] GalleryError),
}

/// What happens to a probe that matches nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissionPolicy {
    /// Register a fresh identity at once.
    Immediate,
    /// Park the probe in a provisional cluster; the cluster becomes a real
    /// identity when it reaches the neighbor threshold.
    PendingCluster,
    /// Like Immediate, but later observations of a track already bound to an
    /// identity skip matching and append directly.
    TrackBound,
}

/// Tie rule applied when two clusters offer the same neighbor count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    SmallestMeanNeighborDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    pub distance_threshold: f64,
    pub neighbor_threshold: usize,
    pub admission: AdmissionPolicy,
    pub tie_break: TieBreak,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
            neighbor_threshold: DEFAULT_NEIGHBOR_THRESHOLD,
            admission: AdmissionPolicy::PendingCluster,
            tie_break: TieBreak::SmallestMeanNeighborDistance,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !self.distance_threshold.is_finite()
            || self.distance_threshold <= 0.0
            || self.distance_threshold > 2.0
        {
            return Err(MatchError::InvalidConfig(format!(
                "distance threshold {} outside (0, 2]",
                self.distance_threshold
            )));
        }
        if self.neighbor_threshold == 0 {
            return Err(MatchError::InvalidConfig(
                "neighbor threshold must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A probe's support inside one cluster: how many stored descriptors sit
/// within the distance threshold, and their mean distance. The mean is
/// undefined when the count is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborStats {
    pub identity: IdentityId,
    pub count: usize,
    pub mean_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    Matched(IdentityId),
    NoMatch,
}

/// The decision for one probe plus per-cluster support, in ascending id
/// order over the clusters that were considered.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDecision {
    pub outcome: MatchOutcome,
    pub stats: Vec<NeighborStats>,
}

/// Total preference order over candidates: more neighbors first, then
/// smaller mean distance, then smaller id. `min` under this order is the
/// match winner.
pub fn rank_order(a: &NeighborStats, b: &NeighborStats) -> Ordering {
    b.count
        .cmp(&a.count)
        .then_with(|| match (a.mean_distance, b.mean_distance) {
            (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
            (None, None) => Ordering::Equal,
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
        })
        .then_with(|| a.identity.cmp(&b.identity))
}

#[inline]
fn scan_cluster(probe: &Descriptor, cluster: &ClusterSnapshot, t_d: f64) -> NeighborStats {
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for d in &cluster.descriptors {
        let dist = distance_unchecked(probe, d);
        if dist <= t_d {
            count += 1;
            sum += dist;
        }
    }
    NeighborStats {
        identity: cluster.id,
        count,
        mean_distance: if count > 0 {
            Some(sum / count as f64)
        } else {
            None
        },
    }
}

/// Support of `probe` inside one cluster, with dimension checking.
pub fn neighbor_stats(
    probe: &Descriptor,
    cluster: &ClusterSnapshot,
    t_d: f64,
) -> Result<NeighborStats, MatchError> {
    for d in &cluster.descriptors {
        if d.dim() != probe.dim() {
            return Err(MatchError::Dimension(DescriptorError::DimensionMismatch {
                expected: probe.dim(),
                actual: d.dim(),
            }));
        }
    }
    Ok(scan_cluster(probe, cluster, t_d))
}

fn check_probe_dim(probe: &Descriptor, view: &GalleryView) -> Result<(), MatchError> {
    if let Some(dim) = view.dim() {
        if probe.dim() != dim {
            return Err(MatchError::Dimension(DescriptorError::DimensionMismatch {
                expected: dim,
                actual: probe.dim(),
            }));
        }
    }
    Ok(())
}

fn decide(stats: Vec<NeighborStats>, t_n: usize) -> MatchDecision {
    let outcome = stats
        .iter()
        .min_by(|a, b| rank_order(a, b))
        .filter(|best| best.count >= t_n)
        .map(|best| MatchOutcome::Matched(best.identity))
        .unwrap_or(MatchOutcome::NoMatch);
    MatchDecision { outcome, stats }
}

/// Single-threaded cluster scan; the reference execution path.
pub fn match_probe_sequential(
    probe: &Descriptor,
    view: &GalleryView,
    excluded: &BTreeSet<IdentityId>,
    cfg: &MatchConfig,
) -> Result<MatchDecision, MatchError> {
    check_probe_dim(probe, view)?;
    let stats: Vec<NeighborStats> = view
        .clusters()
        .iter()
        .filter(|c| !excluded.contains(&c.id))
        .map(|c| scan_cluster(probe, c, cfg.distance_threshold))
        .collect();
    Ok(decide(stats, cfg.neighbor_threshold))
}

/// Cluster scan fanned out across the rayon pool. Per-cluster sums keep
/// their sequential order, so the result is identical to the sequential
/// path bit for bit.
#[cfg(feature = "parallel")]
pub fn match_probe_parallel(
    probe: &Descriptor,
    view: &GalleryView,
    excluded: &BTreeSet<IdentityId>,
    cfg: &MatchConfig,
) -> Result<MatchDecision, MatchError> {
    check_probe_dim(probe, view)?;
    let stats: Vec<NeighborStats> = view
        .clusters()
        .par_iter()
        .filter(|c| !excluded.contains(&c.id))
        .map(|c| scan_cluster(probe, c, cfg.distance_threshold))
        .collect();
    Ok(decide(stats, cfg.neighbor_threshold))
}

/// Matches one probe against a frozen gallery view, skipping excluded
/// identities.
pub fn match_probe(
    probe: &Descriptor,
    view: &GalleryView,
    excluded: &BTreeSet<IdentityId>,
    cfg: &MatchConfig,
) -> Result<MatchDecision, MatchError> {
    #[cfg(feature = "parallel")]
    {
        if view.total_descriptors() >= PARALLEL_SCAN_CUTOFF {
            return match_probe_parallel(probe, view, excluded, cfg);
        }
    }
    match_probe_sequential(probe, view, excluded, cfg)
}

/// All candidate identities ordered best-first under `rank_order`, with no
/// acceptance threshold applied.
pub fn likelihood_rank(
    probe: &Descriptor,
    view: &GalleryView,
    cfg: &MatchConfig,
) -> Result<Vec<NeighborStats>, MatchError> {
    let none = BTreeSet::new();
    let mut stats = match_probe_sequential(probe, view, &none, cfg)?.stats;
    stats.sort_by(rank_order);
    Ok(stats)
}

/// Per-probe result of one frame pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub frame_index: u64,
    pub track_id: u64,
    pub outcome: AssignmentOutcome,
    /// Neighbor support behind the decision (zero when none was involved).
    pub neighbor_count: usize,
    pub mean_distance: Option<f64>,
    /// True when the ghost filter kept this observation out of matching.
    pub ghost_suppressed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentOutcome {
    /// Claimed an existing identity.
    Matched(IdentityId),
    /// Opened (or promoted into) a fresh identity.
    New(IdentityId),
    Unknown,
}

impl Assignment {
    pub fn identity(&self) -> Option<IdentityId> {
        match self.outcome {
            AssignmentOutcome::Matched(id) | AssignmentOutcome::New(id) => Some(id),
            AssignmentOutcome::Unknown => None,
        }
    }
}

/// A provisional cluster: descriptors that matched nothing yet, waiting to
/// prove they are a real identity.
#[derive(Debug, Clone)]
pub struct PendingCluster {
    tag: u64,
    members: Vec<(Descriptor, u64)>,
}

impl PendingCluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn support(&self, probe: &Descriptor, t_d: f64) -> (usize, Option<f64>) {
        let mut count = 0usize;
        let mut sum = 0.0f64;
        for (d, _) in &self.members {
            let dist = distance_unchecked(probe, d);
            if dist <= t_d {
                count += 1;
                sum += dist;
            }
        }
        (
            count,
            if count > 0 {
                Some(sum / count as f64)
            } else {
                None
            },
        )
    }
}

/// Holding area for unmatched probes under `AdmissionPolicy::PendingCluster`.
#[derive(Debug, Default)]
pub struct PendingPool {
    clusters: Vec<PendingCluster>,
    next_tag: u64,
}

impl PendingPool {
    pub fn new() -> Self {
        PendingPool::default()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_members(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    /// Files an unmatched probe: joins the best-supporting open cluster, or
    /// opens a fresh one. A cluster reaching the neighbor threshold is
    /// promoted into the gallery on the spot, and its whole history moves
    /// with it. Clusters in `touched` already absorbed a probe this frame
    /// and are off limits, mirroring the gallery's per-frame exclusion.
    fn admit(
        &mut self,
        probe: &Descriptor,
        frame: u64,
        cfg: &MatchConfig,
        touched: &mut BTreeSet<u64>,
        gallery: &mut Gallery,
    ) -> (AssignmentOutcome, usize, Option<f64>) {
        let mut best: Option<(usize, f64, u64, usize)> = None;
        for (idx, pc) in self.clusters.iter().enumerate() {
            if touched.contains(&pc.tag) {
                continue;
            }
            let (count, mean) = pc.support(probe, cfg.distance_threshold);
            if count == 0 {
                continue;
            }
            let mean = mean.expect("count > 0 has a mean");
            let better = match best {
                None => true,
                Some((bc, bm, bt, _)) => {
                    count > bc || (count == bc && (mean < bm || (mean == bm && pc.tag < bt)))
                }
            };
            if better {
                best = Some((count, mean, pc.tag, idx));
            }
        }
        match best {
            Some((count, mean, tag, idx)) => {
                touched.insert(tag);
                self.clusters[idx].members.push((probe.clone(), frame));
                if self.clusters[idx].members.len() >= cfg.neighbor_threshold {
                    let members = self.clusters.remove(idx).members;
                    let id = gallery.register_identity_from(members, frame);
                    (AssignmentOutcome::New(id), count, Some(mean))
                } else {
                    (AssignmentOutcome::Unknown, count, Some(mean))
                }
            }
            None => {
                let tag = self.next_tag;
                self.next_tag += 1;
                touched.insert(tag);
                if cfg.neighbor_threshold <= 1 {
                    // A singleton already meets the promotion size.
                    let id = gallery.register_new_identity(probe.clone(), frame);
                    (AssignmentOutcome::New(id), 0, None)
                } else {
                    self.clusters.push(PendingCluster {
                        tag,
                        members: vec![(probe.clone(), frame)],
                    });
                    (AssignmentOutcome::Unknown, 0, None)
                }
            }
        }
    }
}

/// Matcher state that survives across frames: the pending pool and, under
/// `TrackBound`, the track-to-identity bindings.
#[derive(Debug, Default)]
pub struct MatcherState {
    pool: PendingPool,
    bindings: BTreeMap<u64, IdentityId>,
}

impl MatcherState {
    pub fn new() -> Self {
        MatcherState::default()
    }

    pub fn pool(&self) -> &PendingPool {
        &self.pool
    }

    pub fn binding(&self, track_id: u64) -> Option<IdentityId> {
        self.bindings.get(&track_id).copied()
    }
}

/// Which matching rule decides probe-versus-gallery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatcherKind {
    /// Neighbor-count rule over the winning cluster.
    DbScan,
    /// Single globally nearest stored descriptor.
    OneNn,
}

/// Resolves one frame of probes against the gallery.
///
/// Probes are processed in ascending track order against a snapshot taken at
/// frame entry. Identities claimed earlier in the frame (matched, opened, or
/// promoted) are excluded for the rest of it, so the returned identity
/// outcomes are pairwise distinct.
pub fn assign_frame(
    batch: &FrameBatch,
    gallery: &mut Gallery,
    state: &mut MatcherState,
    cfg: &MatchConfig,
    kind: MatcherKind,
) -> Result<Vec<Assignment>, MatchError> {
    cfg.validate()?;
    let frame = batch.frame_index();
    let view = gallery.frozen_view();
    let mut excluded: BTreeSet<IdentityId> = BTreeSet::new();
    let mut touched_pending: BTreeSet<u64> = BTreeSet::new();
    let mut out = Vec::with_capacity(batch.len());

    for obs in batch.observations() {
        let probe = &obs.descriptor;

        if cfg.admission == AdmissionPolicy::TrackBound {
            if let Some(bound) = state.bindings.get(&obs.track_id).copied() {
                if gallery.contains(bound) && !excluded.contains(&bound) {
                    gallery.add_descriptor(bound, probe.clone(), frame)?;
                    excluded.insert(bound);
                    out.push(Assignment {
                        frame_index: frame,
                        track_id: obs.track_id,
                        outcome: AssignmentOutcome::Matched(bound),
                        neighbor_count: 0,
                        mean_distance: None,
                        ghost_suppressed: false,
                    });
                    continue;
                }
                // Binding went stale (identity evicted) or the identity is
                // already claimed this frame; fall back to full matching.
                state.bindings.remove(&obs.track_id);
            }
        }

        let decision = match kind {
            MatcherKind::DbScan => match_probe(probe, &view, &excluded, cfg)?,
            MatcherKind::OneNn => crate::baselines::online_1nn_match(
                probe,
                &view,
                &excluded,
                cfg.distance_threshold,
            )?,
        };

        let (outcome, count, mean) = match decision.outcome {
            MatchOutcome::Matched(id) => {
                // The snapshot can still name an identity that eager
                // enforcement evicted earlier this frame. The label stands;
                // there is just no store left to extend.
                if gallery.contains(id) {
                    gallery.add_descriptor(id, probe.clone(), frame)?;
                }
                excluded.insert(id);
                if cfg.admission == AdmissionPolicy::TrackBound {
                    state.bindings.insert(obs.track_id, id);
                }
                let winner = decision
                    .stats
                    .iter()
                    .find(|s| s.identity == id)
                    .expect("winner always carries stats");
                (
                    AssignmentOutcome::Matched(id),
                    winner.count,
                    winner.mean_distance,
                )
            }
            MatchOutcome::NoMatch => match cfg.admission {
                AdmissionPolicy::Immediate | AdmissionPolicy::TrackBound => {
                    let id = gallery.register_new_identity(probe.clone(), frame);
                    excluded.insert(id);
                    if cfg.admission == AdmissionPolicy::TrackBound {
                        state.bindings.insert(obs.track_id, id);
                    }
                    (AssignmentOutcome::New(id), 0, None)
                }
                AdmissionPolicy::PendingCluster => {
                    let (outcome, count, mean) =
                        state
                            .pool
                            .admit(probe, frame, cfg, &mut touched_pending, gallery);
                    if let AssignmentOutcome::New(id) = outcome {
                        excluded.insert(id);
                    }
                    (outcome, count, mean)
                }
            },
        };

        out.push(Assignment {
            frame_index: frame,
            track_id: obs.track_id,
            outcome,
            neighbor_count: count,
            mean_distance: mean,
            ghost_suppressed: false,
        });
    }
    Ok(out)
}
