//! Ground-truthed synthetic descriptor streams.
//!
//! Each identity is a unit-vector centroid; observations are the centroid
//! plus isotropic Gaussian noise, re-normalized. Because the centroids are
//! placed with a guaranteed minimum separation, the intra/inter distance
//! structure of a stream is known by construction and measurable with
//! `separation_report`, which is what end-to-end accuracy tests condition
//! on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::descriptor::{distance_unchecked, normalize_f64, Descriptor};
use crate::types::{FrameBatch, Observation, GHOST_LABEL};

/// Ghost tracks live at most this many frames, safely below any plausible
/// admission age.
pub const GHOST_LIFETIME_MAX: u64 = 4;

/// Ghost tracks are numbered from here up, clear of scheduled tracks.
const GHOST_TRACK_BASE: u64 = 1 << 40;

const ATTEMPTS_PER_CENTROID: usize = 64;
const PROJECTION_PASSES: usize = 200;
const MAX_RESTARTS: usize = 16;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(
        "could not place {n_identities} unit vectors in {dim} dimensions \
         with pairwise distance >= {min_distance}"
    )]
    CentroidSamplingFailed {
        n_identities: usize,
        dim: usize,
        min_distance: f64,
    },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

/// One identity's visibility window under one track id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresenceInterval {
    pub identity: usize,
    pub enter_frame: u64,
    pub exit_frame: u64,
    pub track_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_identities: usize,
    pub centroid_min_distance: f64,
    pub intra_sigma: f64,
    pub frames: u64,
    /// Empty means every identity is present for the whole stream, with
    /// track id equal to its index.
    pub schedule: Vec<PresenceInterval>,
    pub outlier_rate: f64,
    pub outlier_sigma: f64,
    pub ghost_injection_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            dim: 64,
            n_identities: 5,
            centroid_min_distance: 1.2,
            intra_sigma: 0.05,
            frames: 100,
            schedule: Vec::new(),
            outlier_rate: 0.0,
            outlier_sigma: 0.5,
            ghost_injection_rate: 0.0,
        }
    }
}

pub fn subject_label(identity: usize) -> String {
    format!("subject_{identity}")
}

impl SimConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.dim == 0 {
            return Err("dim must be at least 1".into());
        }
        if self.n_identities == 0 {
            return Err("n_identities must be at least 1".into());
        }
        if self.frames == 0 {
            return Err("frames must be at least 1".into());
        }
        if !(self.centroid_min_distance.is_finite()
            && (0.0..2.0).contains(&self.centroid_min_distance))
        {
            return Err("centroid_min_distance must lie in [0, 2)".into());
        }
        for (name, v) in [
            ("intra_sigma", self.intra_sigma),
            ("outlier_sigma", self.outlier_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and non-negative"));
            }
        }
        for (name, v) in [
            ("outlier_rate", self.outlier_rate),
            ("ghost_injection_rate", self.ghost_injection_rate),
        ] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(format!("{name} must lie in [0, 1)"));
            }
        }
        let schedule = &self.schedule;
        for iv in schedule {
            if iv.identity >= self.n_identities {
                return Err(format!(
                    "schedule names identity {} but there are only {}",
                    iv.identity, self.n_identities
                ));
            }
            if iv.enter_frame > iv.exit_frame {
                return Err(format!(
                    "schedule interval for identity {} enters after it exits",
                    iv.identity
                ));
            }
            if iv.exit_frame >= self.frames {
                return Err(format!(
                    "schedule interval for identity {} exits at frame {} but the stream ends at {}",
                    iv.identity,
                    iv.exit_frame,
                    self.frames - 1
                ));
            }
            if iv.track_id >= GHOST_TRACK_BASE {
                return Err(format!("track id {} is reserved for ghosts", iv.track_id));
            }
        }
        for (i, a) in schedule.iter().enumerate() {
            for b in &schedule[i + 1..] {
                let overlap = a.enter_frame <= b.exit_frame && b.enter_frame <= a.exit_frame;
                if overlap && a.track_id == b.track_id {
                    return Err(format!(
                        "track id {} is used by two overlapping intervals",
                        a.track_id
                    ));
                }
            }
        }
        Ok(())
    }

    fn effective_schedule(&self) -> Vec<PresenceInterval> {
        if !self.schedule.is_empty() {
            return self.schedule.clone();
        }
        (0..self.n_identities)
            .map(|identity| PresenceInterval {
                identity,
                enter_frame: 0,
                exit_frame: self.frames - 1,
                track_id: identity as u64,
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn renormalize(v: &mut [f64]) -> bool {
    let norm = dot(v, v).sqrt();
    if norm < 1e-12 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if renormalize(&mut v) {
            return v;
        }
    }
}

/// Tries to place `k` unit vectors with all pairwise dot products at or
/// below `c_max` by steering random candidates: any candidate too close to
/// an accepted vector has the excess projected out toward `target`, then
/// gets re-verified against the raw bound.
fn try_place(
    rng: &mut ChaCha8Rng,
    k: usize,
    dim: usize,
    c_max: f64,
    target: f64,
) -> Option<Vec<Vec<f64>>> {
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(k);
    while accepted.len() < k {
        let mut placed = false;
        'attempt: for _ in 0..ATTEMPTS_PER_CENTROID {
            let mut v = random_unit(rng, dim);
            for _ in 0..PROJECTION_PASSES {
                let mut adjusted = false;
                for u in &accepted {
                    let d = dot(&v, u);
                    if d > c_max {
                        let excess = d - target;
                        for (vi, ui) in v.iter_mut().zip(u) {
                            *vi -= excess * ui;
                        }
                        if !renormalize(&mut v) {
                            continue 'attempt;
                        }
                        adjusted = true;
                    }
                }
                if !adjusted {
                    break;
                }
            }
            if accepted.iter().all(|u| dot(&v, u) <= c_max) {
                accepted.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(accepted)
}

/// Draws the centroid set a stream with this config will use. Consumes the
/// same leading RNG draws as `generate_stream`, so the returned vectors are
/// exactly the stream's generators.
pub fn sample_centroids(cfg: &SimConfig) -> Result<Vec<Descriptor>, SimError> {
    cfg.check().map_err(SimError::InvalidConfig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_centroids_with(&mut rng, cfg)
}

fn sample_centroids_with(
    rng: &mut ChaCha8Rng,
    cfg: &SimConfig,
) -> Result<Vec<Descriptor>, SimError> {
    let (k, dim, min_dist) = (cfg.n_identities, cfg.dim, cfg.centroid_min_distance);
    // distance(u, v) >= m on unit vectors is exactly <u, v> <= 1 - m^2/2.
    let c_max = 1.0 - min_dist * min_dist / 2.0;
    let mut target = c_max - 0.015 * (1.0 - c_max);
    if k >= 2 {
        // No k unit vectors can all pair below the simplex dot product, so
        // never steer past it.
        let simplex = -1.0 / (k as f64 - 1.0);
        if target < simplex {
            target = simplex.min(c_max);
        }
    }
    for _ in 0..MAX_RESTARTS {
        if let Some(placed) = try_place(rng, k, dim, c_max, target) {
            let centroids = placed
                .iter()
                .map(|v| normalize_f64(v).expect("verified non-degenerate"))
                .collect();
            return Ok(centroids);
        }
    }
    Err(SimError::CentroidSamplingFailed {
        n_identities: k,
        dim,
        min_distance: min_dist,
    })
}

/// Centroid plus isotropic noise, back on the sphere. Zero sigma reproduces
/// the centroid bit for bit.
fn perturb(rng: &mut ChaCha8Rng, centroid: &Descriptor, sigma: f64) -> Descriptor {
    if sigma == 0.0 {
        return centroid.clone();
    }
    loop {
        let values: Vec<f64> = centroid
            .values()
            .iter()
            .map(|&c| f64::from(c) + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Ok(d) = normalize_f64(&values) {
            return d;
        }
    }
}

fn random_unit_descriptor(rng: &mut ChaCha8Rng, dim: usize) -> Descriptor {
    let v = random_unit(rng, dim);
    normalize_f64(&v).expect("unit vector")
}

/// Generates the whole stream. Fully determined by the config; regenerating
/// with the same config yields identical observations.
pub fn generate_stream(cfg: &SimConfig) -> Result<Vec<FrameBatch>, SimError> {
    cfg.check().map_err(SimError::InvalidConfig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centroids = sample_centroids_with(&mut rng, cfg)?;
    let schedule = cfg.effective_schedule();

    let mut batches = Vec::new();
    let mut ghosts: Vec<(u64, u64)> = Vec::new();
    let mut ghost_counter = 0u64;
    for frame in 0..cfg.frames {
        let mut observations = Vec::new();
        for iv in &schedule {
            if frame < iv.enter_frame || frame > iv.exit_frame {
                continue;
            }
            let coin: f64 = rng.gen();
            let sigma = if coin < cfg.outlier_rate {
                cfg.outlier_sigma
            } else {
                cfg.intra_sigma
            };
            observations.push(Observation {
                frame_index: frame,
                track_id: iv.track_id,
                descriptor: perturb(&mut rng, &centroids[iv.identity], sigma),
                truth_label: Some(subject_label(iv.identity)),
            });
        }

        let coin: f64 = rng.gen();
        if coin < cfg.ghost_injection_rate {
            let lifetime = rng.gen_range(1..=GHOST_LIFETIME_MAX);
            ghosts.push((GHOST_TRACK_BASE + ghost_counter, lifetime));
            ghost_counter += 1;
        }
        for (track_id, remaining) in ghosts.iter_mut() {
            observations.push(Observation {
                frame_index: frame,
                track_id: *track_id,
                descriptor: random_unit_descriptor(&mut rng, cfg.dim),
                truth_label: Some(GHOST_LABEL.to_string()),
            });
            *remaining -= 1;
        }
        ghosts.retain(|(_, remaining)| *remaining > 0);

        if !observations.is_empty() {
            batches.push(FrameBatch::new(frame, observations).expect("schedule validated"));
        }
    }
    Ok(batches)
}

/// Exhaustive pairwise distance extremes over the stream's labeled,
/// non-ghost observations. `None` marks a side with no pairs at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationReport {
    pub max_intra: Option<f64>,
    pub min_inter: Option<f64>,
}

pub fn separation_report(batches: &[FrameBatch]) -> SeparationReport {
    let points: Vec<(&str, &Descriptor)> = batches
        .iter()
        .flat_map(|b| b.observations())
        .filter_map(|o| {
            o.truth_label
                .as_deref()
                .filter(|l| *l != GHOST_LABEL)
                .map(|l| (l, &o.descriptor))
        })
        .collect();

    let pair_extremes = |i: usize| -> (Option<f64>, Option<f64>) {
        let (label, d) = points[i];
        let mut max_intra = None;
        let mut min_inter = None;
        for &(other_label, other) in &points[i + 1..] {
            let dist = distance_unchecked(d, other);
            if label == other_label {
                max_intra = Some(max_intra.map_or(dist, |m: f64| m.max(dist)));
            } else {
                min_inter = Some(min_inter.map_or(dist, |m: f64| m.min(dist)));
            }
        }
        (max_intra, min_inter)
    };

    let merge = |a: (Option<f64>, Option<f64>), b: (Option<f64>, Option<f64>)| {
        let max_intra = match (a.0, b.0) {
            (Some(x), Some(y)) => Some(x.max(y)),
            (x, y) => x.or(y),
        };
        let min_inter = match (a.1, b.1) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        };
        (max_intra, min_inter)
    };

    #[cfg(feature = "parallel")]
    let (max_intra, min_inter) = (0..points.len())
        .into_par_iter()
        .map(pair_extremes)
        .reduce(|| (None, None), merge);
    #[cfg(not(feature = "parallel"))]
    let (max_intra, min_inter) = (0..points.len())
        .map(pair_extremes)
        .fold((None, None), merge);

    SeparationReport {
        max_intra,
        min_inter,
    }
}
