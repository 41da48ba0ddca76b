//! Sequential versus data-parallel probe matching across gallery sizes.

use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use openreid_core::descriptor::normalize_f64;
use openreid_core::gallery::GalleryView;
use openreid_core::matcher::{match_probe_parallel, match_probe_sequential, MatchConfig};
use openreid_core::types::IdentityId;

const DIM: usize = 1024;
const CLUSTERS: usize = 20;

fn random_unit(rng: &mut ChaCha8Rng) -> openreid_core::Descriptor {
    let v: Vec<f64> = (0..DIM).map(|_| rng.sample(StandardNormal)).collect();
    normalize_f64(&v).expect("random vector")
}

fn build_view(total_descriptors: usize, rng: &mut ChaCha8Rng) -> GalleryView {
    let per_cluster = total_descriptors / CLUSTERS;
    GalleryView::from_clusters((0..CLUSTERS).map(|i| {
        let descriptors = (0..per_cluster).map(|_| random_unit(rng)).collect();
        (IdentityId::new(i as u64 + 1), descriptors)
    }))
}

fn bench_matching(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = MatchConfig::default();
    let excluded = BTreeSet::new();
    let mut group = c.benchmark_group("match_probe");
    for &total in &[200usize, 1000, 5000, 20000] {
        let view = build_view(total, &mut rng);
        let probes: Vec<_> = (0..16).map(|_| random_unit(&mut rng)).collect();
        group.throughput(Throughput::Elements(probes.len() as u64));
        group.bench_with_input(
            BenchmarkId::new("sequential", total),
            &total,
            |b, _| {
                b.iter(|| {
                    for p in &probes {
                        criterion::black_box(
                            match_probe_sequential(p, &view, &excluded, &cfg).unwrap(),
                        );
                    }
                })
            },
        );
        group.bench_with_input(BenchmarkId::new("parallel", total), &total, |b, _| {
            b.iter(|| {
                for p in &probes {
                    criterion::black_box(
                        match_probe_parallel(p, &view, &excluded, &cfg).unwrap(),
                    );
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matching);
criterion_main!(benches);
