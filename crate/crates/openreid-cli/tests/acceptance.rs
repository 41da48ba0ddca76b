//! Acceptance suite for the whole engine, one test per criterion.
//!
//! Every test prints a `criterion N (...): pass|fail` line; run with
//! `cargo test --test acceptance -- --nocapture` to see all ten lines at
//! once. Tolerances and fixture parameters are pinned here on purpose so a
//! behavioral regression anywhere in the stack turns a line red.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use openreid_core::config::EngineConfig;
use openreid_core::descriptor::{distance_unchecked, normalize_f64};
use openreid_core::engine::Engine;
use openreid_core::eval::{CcmBuilder, CcmMetrics};
use openreid_core::gallery::{Gallery, GalleryConfig, GalleryView};
use openreid_core::matcher::{
    match_probe, AdmissionPolicy, MatchConfig, MatchOutcome, MatcherKind,
};
use openreid_core::simgen::{generate_stream, separation_report, SimConfig};
use openreid_core::types::{FrameBatch, Observation, GHOST_LABEL};
use openreid_core::{Descriptor, IdentityId};

/// Serializes the timing-sensitive and subprocess-spawning tests so they do
/// not contend for cores with each other.
static HEAVY: Mutex<()> = Mutex::new(());

fn report(n: u32, name: &str, ok: bool) {
    println!("criterion {n} ({name}): {}", if ok { "pass" } else { "fail" });
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Descriptor {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(d) = normalize_f64(&v) {
            return d;
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: &Descriptor, sigma: f64) -> Descriptor {
    loop {
        let v: Vec<f64> = base
            .values()
            .iter()
            .map(|&x| f64::from(x) + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Ok(d) = normalize_f64(&v) {
            return d;
        }
    }
}

fn stream_metrics(
    batches: &[FrameBatch],
    t_d: f64,
    kind: MatcherKind,
) -> (CcmMetrics, usize) {
    let config = EngineConfig {
        t_d,
        ghost_min_frames: 1,
        matcher: kind,
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(config).unwrap();
    let assignments = engine.run(batches).unwrap();
    let unknown = assignments
        .iter()
        .filter(|a| a.identity().is_none())
        .count();
    let mut builder = CcmBuilder::new();
    builder.accumulate_run(batches, &assignments).unwrap();
    (builder.finalize().metrics().unwrap(), unknown)
}

#[test]
fn c01_golden_matrix_metrics() {
    const TOL: f64 = 1e-9;
    let mut b = CcmBuilder::new();
    let id = |v: u64| Some(IdentityId::new(v));
    for _ in 0..32 {
        b.accumulate("alice", id(4));
    }
    for _ in 0..27 {
        b.accumulate("alice", id(2));
    }
    for _ in 0..3 {
        b.accumulate("alice", None);
    }
    for _ in 0..4 {
        b.accumulate("bob", id(4));
    }
    for _ in 0..196 {
        b.accumulate("bob", id(1));
    }
    for _ in 0..3 {
        b.accumulate("bob", None);
    }
    for _ in 0..128 {
        b.accumulate("carol", id(3));
    }
    for _ in 0..4 {
        b.accumulate("carol", None);
    }
    let m = b.finalize();
    let labels: Vec<String> = m.columns().iter().map(|c| c.label()).collect();
    let met = m.metrics().unwrap();

    let layout_ok = m.row_labels() == ["alice", "bob", "carol"]
        && labels == ["id4", "id1", "id3", "id2", "unknown"]
        && m.counts()
            == [
                vec![32, 0, 0, 27, 3],
                vec![4, 196, 0, 0, 3],
                vec![0, 0, 128, 0, 4],
            ];
    let counts_ok = met.true_positives == 356
        && met.false_accepts == 4
        && met.false_rejects == 37
        && met.total == 397;
    let rates_ok = (met.accuracy - 356.0 / 397.0).abs() < TOL
        && (met.far - 4.0 / 397.0).abs() < TOL
        && (met.frr - 37.0 / 397.0).abs() < TOL;
    let ok = layout_ok && counts_ok && rates_ok;
    report(1, "golden matrix metrics", ok);
    assert!(
        ok,
        "rows {:?} columns {labels:?} counts {:?} metrics {met:?}",
        m.row_labels(),
        m.counts()
    );
}

#[test]
fn c02_metric_identity_on_random_matrices() {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let labels = ["u0", "u1", "u2", "u3", "u4", "u5"];
    for trial in 0..1000 {
        let mut b = CcmBuilder::new();
        let n_labels = rng.gen_range(1..=labels.len());
        let id_pool = rng.gen_range(1..=8u64);
        let mut non_ghost = 0u64;
        for _ in 0..rng.gen_range(1..=200) {
            if rng.gen_bool(0.05) {
                let assigned = rng
                    .gen_bool(0.3)
                    .then(|| IdentityId::new(rng.gen_range(1..=id_pool)));
                b.accumulate(GHOST_LABEL, assigned);
                continue;
            }
            let assigned = (!rng.gen_bool(0.25))
                .then(|| IdentityId::new(rng.gen_range(1..=id_pool)));
            b.accumulate(labels[rng.gen_range(0..n_labels)], assigned);
            non_ghost += 1;
        }
        if non_ghost == 0 {
            b.accumulate("u0", None);
        }
        let met = b.finalize().metrics().unwrap();
        let exact = met.true_positives + met.false_accepts + met.false_rejects == met.total;
        let floats = (met.accuracy + met.far + met.frr - 1.0).abs() < TOL;
        if !(exact && floats) {
            report(2, "accuracy plus error rates sum to one", false);
            panic!("trial {trial}: {met:?}");
        }
    }
    report(2, "accuracy plus error rates sum to one", true);
}

#[test]
fn c03_matcher_agrees_with_exhaustive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    for trial in 0..10_000 {
        let dim = rng.gen_range(1..=8);
        // Drawing everything from a small pool forces exact distance and
        // count ties, so the tie-break chain gets exercised for real.
        let pool: Vec<Descriptor> = (0..6).map(|_| random_unit(&mut rng, dim)).collect();
        let clusters: Vec<(IdentityId, Vec<Descriptor>)> = (0..rng.gen_range(1..=5))
            .map(|i| {
                let members = (0..rng.gen_range(1..=4))
                    .map(|_| pool[rng.gen_range(0..pool.len())].clone())
                    .collect();
                (IdentityId::new(i + 1), members)
            })
            .collect();
        let view = GalleryView::from_clusters(clusters.clone());
        let probe = if rng.gen_bool(0.7) {
            pool[rng.gen_range(0..pool.len())].clone()
        } else {
            random_unit(&mut rng, dim)
        };
        let t_d = if rng.gen_bool(0.5) {
            // Sit the threshold exactly on a realized distance to hit the
            // inclusive boundary.
            let d = distance_unchecked(
                &pool[rng.gen_range(0..pool.len())],
                &pool[rng.gen_range(0..pool.len())],
            );
            if d > 0.0 && d <= 2.0 {
                d
            } else {
                1.0
            }
        } else {
            [0.3, 0.7, 1.0, 1.4, 2.0][rng.gen_range(0..5)]
        };
        let t_n = rng.gen_range(1..=4);
        let mut excluded = BTreeSet::new();
        for (id, _) in &clusters {
            if rng.gen_bool(0.2) {
                excluded.insert(*id);
            }
        }
        let cfg = MatchConfig {
            distance_threshold: t_d,
            neighbor_threshold: t_n,
            ..MatchConfig::default()
        };
        let got = match_probe(&probe, &view, &excluded, &cfg).unwrap().outcome;

        // Reference decision from the full distance matrix: count per
        // cluster, then a literal best-candidate scan in id order.
        let mut best: Option<(IdentityId, usize, f64)> = None;
        for (id, members) in &clusters {
            if excluded.contains(id) {
                continue;
            }
            let mut count = 0usize;
            let mut sum = 0.0f64;
            for m in members {
                let d = distance_unchecked(&probe, m);
                if d <= t_d {
                    count += 1;
                    sum += d;
                }
            }
            if count == 0 {
                continue;
            }
            let mean = sum / count as f64;
            best = match best {
                Some((_, bc, bm)) if count > bc || (count == bc && mean < bm) => {
                    Some((*id, count, mean))
                }
                None => Some((*id, count, mean)),
                keep => keep,
            };
        }
        let want = match best {
            Some((id, count, _)) if count >= t_n => MatchOutcome::Matched(id),
            _ => MatchOutcome::NoMatch,
        };
        if got != want {
            report(3, "matcher agrees with exhaustive reference", false);
            panic!("trial {trial}: got {got:?} want {want:?} (t_d {t_d} t_n {t_n})");
        }
    }
    report(3, "matcher agrees with exhaustive reference", true);
}

#[test]
fn c04_no_duplicate_identity_within_a_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let policies = [
        AdmissionPolicy::Immediate,
        AdmissionPolicy::PendingCluster,
        AdmissionPolicy::TrackBound,
    ];
    let mut frames_done = 0u32;
    let mut round = 0usize;
    while frames_done < 1000 {
        let config = EngineConfig {
            t_d: [0.8, 1.2, 1.7][round % 3],
            t_n: [1, 2, 3][(round / 3) % 3],
            s1: [Some(4), Some(60), None][round % 3],
            s2: [Some(3), Some(20), None][(round + 1) % 3],
            ghost_min_frames: [1, 3][round % 2],
            admission: policies[round % 3],
            ..EngineConfig::default()
        };
        let mut engine = Engine::new(config).unwrap();
        let anchors: Vec<Descriptor> = (0..4).map(|_| random_unit(&mut rng, 8)).collect();
        for frame in 0..100u64 {
            let n_probes = rng.gen_range(1..=7);
            let mut tracks: Vec<u64> = (0..12).collect();
            let mut obs = Vec::new();
            for k in 0..n_probes {
                let j = rng.gen_range(k..tracks.len());
                tracks.swap(k, j);
                let anchor = &anchors[rng.gen_range(0..anchors.len())];
                obs.push(Observation {
                    frame_index: frame,
                    track_id: tracks[k],
                    descriptor: jitter(&mut rng, anchor, 0.08),
                    truth_label: None,
                });
            }
            let batch = FrameBatch::new(frame, obs).unwrap();
            let assignments = engine.process_batch(&batch).unwrap();
            let mut seen = BTreeSet::new();
            for a in &assignments {
                if let Some(id) = a.identity() {
                    if !seen.insert(id) {
                        report(4, "no duplicate identity within a frame", false);
                        panic!("round {round} frame {frame}: id {id:?} twice in {assignments:?}");
                    }
                }
            }
            frames_done += 1;
            if frames_done == 1000 {
                break;
            }
        }
        round += 1;
    }
    report(4, "no duplicate identity within a frame", true);
}

#[test]
fn c05_capacity_limits_hold_under_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    let combos: [(Option<usize>, Option<usize>); 5] = [
        (Some(1), Some(3)),
        (Some(2), Some(1)),
        (Some(5), None),
        (None, Some(2)),
        (Some(60), Some(20)),
    ];
    let check = |gallery: &Gallery, s1: Option<usize>, s2: Option<usize>| -> bool {
        if let Some(cap) = s2 {
            if gallery.clusters().count() > cap {
                return false;
            }
        }
        if let Some(cap) = s1 {
            if gallery.clusters().any(|c| c.len() > cap) {
                return false;
            }
        }
        true
    };
    for segment in 0..10 {
        let (s1, s2) = combos[segment % combos.len()];
        let eager = segment % 2 == 0;
        let config = GalleryConfig {
            max_descriptors_per_identity: s1,
            max_identities: s2,
            enforce_every_n_frames: if eager { 1 } else { 5 },
        };
        let mut gallery = Gallery::new(config).unwrap();
        let mut frame = 0u64;
        for op in 0..10_000 {
            frame += rng.gen_range(0..2);
            let observable = match rng.gen_range(0u32..10) {
                0..=2 => {
                    gallery.register_new_identity(random_unit(&mut rng, 4), frame);
                    eager
                }
                3..=8 => {
                    let ids: Vec<IdentityId> = gallery.clusters().map(|c| c.id()).collect();
                    match ids.get(rng.gen_range(0..ids.len().max(1))) {
                        Some(&id) => {
                            gallery
                                .add_descriptor(id, random_unit(&mut rng, 4), frame)
                                .unwrap();
                            eager
                        }
                        None => {
                            gallery.register_new_identity(random_unit(&mut rng, 4), frame);
                            eager
                        }
                    }
                }
                _ => {
                    gallery.enforce_limits();
                    true
                }
            };
            if observable && !check(&gallery, s1, s2) {
                report(5, "capacity limits hold under fuzz", false);
                panic!("segment {segment} op {op}: limits {s1:?}/{s2:?} violated");
            }
        }
        gallery.enforce_limits();
        if !check(&gallery, s1, s2) {
            report(5, "capacity limits hold under fuzz", false);
            panic!("segment {segment} final state: limits {s1:?}/{s2:?} violated");
        }
    }
    report(5, "capacity limits hold under fuzz", true);
}

#[test]
fn c06_end_to_end_accuracy_on_separated_stream() {
    let sim = SimConfig {
        seed: 1,
        dim: 64,
        n_identities: 5,
        centroid_min_distance: 1.56,
        intra_sigma: 0.002,
        frames: 400,
        ..SimConfig::default()
    };
    let batches = generate_stream(&sim).unwrap();
    let rep = separation_report(&batches);
    let separated = rep.max_intra.unwrap() < 0.6 && rep.min_inter.unwrap() > 1.5;

    let (met, unknown) = stream_metrics(&batches, 1.0, MatcherKind::DbScan);
    // Unknowns are bounded by the pending warm-up: n_identities * (t_n - 1).
    let ok = separated && met.accuracy >= 0.99 && met.far <= 0.005 && unknown <= 10;
    report(6, "end-to-end accuracy on separated stream", ok);
    assert!(ok, "separation {rep:?}, metrics {met:?}, unknown {unknown}");
}

#[test]
fn c07_density_mode_beats_nearest_neighbor_under_outliers() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let mut acc_wins = 0u32;
    let mut far_wins = 0u32;
    let mut detail = String::new();
    for seed in 1..=5u64 {
        let sim = SimConfig {
            seed,
            dim: 16,
            n_identities: 5,
            centroid_min_distance: 1.2,
            intra_sigma: 0.03,
            frames: 300,
            outlier_rate: 0.1,
            outlier_sigma: 0.35,
            ..SimConfig::default()
        };
        let batches = generate_stream(&sim).unwrap();
        let (db, _) = stream_metrics(&batches, 1.1, MatcherKind::DbScan);
        let (nn, _) = stream_metrics(&batches, 1.1, MatcherKind::OneNn);
        if db.accuracy > nn.accuracy {
            acc_wins += 1;
        }
        if nn.far > db.far {
            far_wins += 1;
        }
        detail.push_str(&format!(
            "seed {seed}: density acc {:.4} far {:.4}, nearest acc {:.4} far {:.4}\n",
            db.accuracy, db.far, nn.accuracy, nn.far
        ));
    }
    let ok = acc_wins >= 4 && far_wins >= 4;
    report(7, "density mode beats nearest neighbor under outliers", ok);
    assert!(ok, "accuracy wins {acc_wins}/5, far wins {far_wins}/5\n{detail}");
}

#[test]
fn c08_accepted_set_grows_with_distance_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let anchors: Vec<Descriptor> = (0..6).map(|_| random_unit(&mut rng, 8)).collect();
    let view = GalleryView::from_clusters(anchors.iter().enumerate().map(|(i, anchor)| {
        let members = (0..8).map(|_| jitter(&mut rng, anchor, 0.15)).collect();
        (IdentityId::new(i as u64 + 1), members)
    }));
    let probes: Vec<Descriptor> = (0..300)
        .map(|_| {
            if rng.gen_bool(0.5) {
                let i = rng.gen_range(0..anchors.len());
                jitter(&mut rng, &anchors[i], 0.5)
            } else {
                random_unit(&mut rng, 8)
            }
        })
        .collect();
    let grid = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0];
    let excluded = BTreeSet::new();
    let mut prev: BTreeSet<usize> = BTreeSet::new();
    for (step, &t_d) in grid.iter().enumerate() {
        let cfg = MatchConfig {
            distance_threshold: t_d,
            neighbor_threshold: 3,
            ..MatchConfig::default()
        };
        let accepted: BTreeSet<usize> = probes
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                matches!(
                    match_probe(p, &view, &excluded, &cfg).unwrap().outcome,
                    MatchOutcome::Matched(_)
                )
            })
            .map(|(i, _)| i)
            .collect();
        if !prev.is_subset(&accepted) {
            report(8, "accepted set grows with distance threshold", false);
            panic!(
                "step {step} (t_d {t_d}): lost probes {:?}",
                prev.difference(&accepted).collect::<Vec<_>>()
            );
        }
        prev = accepted;
    }
    report(8, "accepted set grows with distance threshold", true);
}

fn run_cli(args: &[&str], dir: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_openreid"))
        .args(args)
        .current_dir(dir)
        .status()
        .unwrap();
    assert!(status.success(), "openreid {args:?} failed");
}

#[test]
fn c09_match_time_scales_linearly_with_gallery_size() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    run_cli(
        &[
            "bench", "--sizes", "600,1200", "--dim", "4096", "--threads", "1", "--out",
            "bench.csv",
        ],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut per_probe = std::collections::BTreeMap::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        per_probe.insert(
            cols[0].parse::<usize>().unwrap(),
            cols[4].parse::<f64>().unwrap(),
        );
    }
    let ratio = per_probe[&1200] / per_probe[&600];
    let ok = (1.6..=2.6).contains(&ratio);
    report(9, "match time scales linearly with gallery size", ok);
    assert!(ok, "doubling 600 -> 1200 descriptors changed per-probe time by {ratio:.3}");
}

#[test]
fn c10_pipeline_outputs_are_deterministic() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let sim_cfg = "seed = 9\ndim = 32\nn_identities = 4\ncentroid_min_distance = 1.1\n\
                   intra_sigma = 0.02\nframes = 80\noutlier_rate = 0.05\noutlier_sigma = 0.3\n\
                   ghost_injection_rate = 0.02\n";
    let engine_cfg = "t_d = 1.0\nt_n = 3\nghost_min_frames = 2\nadmission = pending\n";
    let run_pipeline = |dir: &Path| {
        std::fs::write(dir.join("sim.cfg"), sim_cfg).unwrap();
        std::fs::write(dir.join("engine.cfg"), engine_cfg).unwrap();
        run_cli(&["synth", "--config", "sim.cfg", "--out", "stream.jsonl"], dir);
        run_cli(
            &[
                "run", "--stream", "stream.jsonl", "--config", "engine.cfg", "--out",
                "assign.jsonl", "--checkpoint", "gallery.jsonl",
            ],
            dir,
        );
        run_cli(
            &[
                "eval", "--stream", "stream.jsonl", "--assignments", "assign.jsonl",
                "--ccm-out", "ccm", "--metrics-out", "metrics.csv",
            ],
            dir,
        );
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    let files = [
        "stream.jsonl",
        "assign.jsonl",
        "gallery.jsonl",
        "ccm.fold0.csv",
        "ccm.pooled.csv",
        "metrics.csv",
    ];
    for name in files {
        let left = std::fs::read(a.path().join(name)).unwrap();
        let right = std::fs::read(b.path().join(name)).unwrap();
        if left != right {
            report(10, "pipeline outputs are deterministic", false);
            panic!("{name} differs between identical runs");
        }
    }
    report(10, "pipeline outputs are deterministic", true);
}
