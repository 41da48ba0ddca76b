//! Cross-cutting matcher properties on randomized galleries.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use openreid_core::descriptor::{normalize_f64, Descriptor};
use openreid_core::gallery::GalleryView;
use openreid_core::matcher::{match_probe_sequential, MatchConfig, MatchOutcome};
use openreid_core::types::IdentityId;

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Descriptor {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(d) = normalize_f64(&v) {
            return d;
        }
    }
}

fn random_view(rng: &mut ChaCha8Rng, dim: usize) -> GalleryView {
    let n_clusters = rng.gen_range(1..=6);
    GalleryView::from_clusters((0..n_clusters).map(|i| {
        let size = rng.gen_range(1..=8);
        let descriptors = (0..size).map(|_| random_unit(rng, dim)).collect();
        (IdentityId::new(i + 1), descriptors)
    }))
}

#[test]
fn acceptance_grows_with_the_distance_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64).collect();
    for _ in 0..200 {
        let dim = rng.gen_range(2..=8);
        let view = random_view(&mut rng, dim);
        let probe = random_unit(&mut rng, dim);
        let mut previous: Option<bool> = None;
        for &t_d in &grid {
            let cfg = MatchConfig {
                distance_threshold: t_d,
                neighbor_threshold: 2,
                ..MatchConfig::default()
            };
            let accepted = matches!(
                match_probe_sequential(&probe, &view, &BTreeSet::new(), &cfg)
                    .unwrap()
                    .outcome,
                MatchOutcome::Matched(_)
            );
            if let Some(prev) = previous {
                assert!(
                    accepted >= prev,
                    "acceptance regressed when t_d grew to {t_d}"
                );
            }
            previous = Some(accepted);
        }
    }
}

#[test]
fn excluded_identities_never_win() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = MatchConfig {
        distance_threshold: 1.5,
        neighbor_threshold: 1,
        ..MatchConfig::default()
    };
    for _ in 0..500 {
        let dim = rng.gen_range(2..=8);
        let view = random_view(&mut rng, dim);
        let probe = random_unit(&mut rng, dim);
        let first = match_probe_sequential(&probe, &view, &BTreeSet::new(), &cfg).unwrap();
        if let MatchOutcome::Matched(winner) = first.outcome {
            let mut excluded = BTreeSet::new();
            excluded.insert(winner);
            let second = match_probe_sequential(&probe, &view, &excluded, &cfg).unwrap();
            if let MatchOutcome::Matched(next) = second.outcome {
                assert_ne!(next, winner);
            }
            assert!(second.stats.iter().all(|s| s.identity != winner));
        }
    }
}

#[cfg(feature = "parallel")]
mod parallel {
    use super::*;
    use openreid_core::matcher::match_probe_parallel;

    #[test]
    fn parallel_and_sequential_agree_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = MatchConfig::default();
        for round in 0..300 {
            let dim = rng.gen_range(2..=8);
            // Mix small and large clusters so both dispatch regimes occur.
            let n_clusters = rng.gen_range(1..=4);
            let view = GalleryView::from_clusters((0..n_clusters).map(|i| {
                let size = if round % 3 == 0 {
                    rng.gen_range(200..=400)
                } else {
                    rng.gen_range(1..=8)
                };
                let descriptors = (0..size).map(|_| random_unit(&mut rng, dim)).collect();
                (IdentityId::new(i + 1), descriptors)
            }));
            let probe = random_unit(&mut rng, dim);
            let seq = match_probe_sequential(&probe, &view, &BTreeSet::new(), &cfg).unwrap();
            let par = match_probe_parallel(&probe, &view, &BTreeSet::new(), &cfg).unwrap();
            assert_eq!(seq.outcome, par.outcome);
            assert_eq!(seq.stats.len(), par.stats.len());
            for (a, b) in seq.stats.iter().zip(&par.stats) {
                assert_eq!(a.identity, b.identity);
                assert_eq!(a.count, b.count);
                // Bit equality, not tolerance: both paths must sum in the
                // same order.
                assert_eq!(a.mean_distance, b.mean_distance);
            }
        }
    }
}
