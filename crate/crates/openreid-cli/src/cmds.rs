//! Subcommand implementations and the usage/data error split.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use openreid_core::config::{ConfigError, EngineConfig};
use openreid_core::descriptor::normalize_f64;
use openreid_core::engine::Engine;
use openreid_core::eval::{
    pool, write_metrics_csv, write_sweep_csv, CcmBuilder, EvalError, MetricsRow, SweepGrid,
};
use openreid_core::gallery::GalleryView;
use openreid_core::matcher::{match_probe, match_probe_sequential, MatchConfig};
use openreid_core::simgen::{generate_stream, SimConfig, SimError};
use openreid_core::stream::{
    read_assignments, read_stream_batches, records_from_batches, write_assignments, write_stream,
    AssignmentRecord, StreamError,
};
use openreid_core::types::IdentityId;
use openreid_core::Descriptor;

/// Exit code 1 for problems with how the tool was invoked or configured,
/// exit code 2 for problems with the data being processed.
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<StreamError> for Failure {
    fn from(e: StreamError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyGrid => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn read_config_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))
}

fn open_data_file(path: &Path) -> Result<BufReader<fs::File>, Failure> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Data(format!("cannot open {}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Data(format!("cannot create {}: {e}", path.display())))
}

pub fn synth(config_path: &Path, out_path: &Path) -> Result<(), Failure> {
    let config = SimConfig::from_str(&read_config_file(config_path)?)?;
    let batches = generate_stream(&config)?;
    let records = records_from_batches(&batches);
    let mut out = create_output(out_path)?;
    write_stream(&mut out, config.dim, &records)?;
    out.flush()
        .map_err(|e| Failure::Data(format!("write {}: {e}", out_path.display())))?;
    Ok(())
}

pub fn run(
    stream_path: &Path,
    config_path: &Path,
    out_path: &Path,
    checkpoint_path: Option<&Path>,
) -> Result<(), Failure> {
    let config = EngineConfig::from_str(&read_config_file(config_path)?)?;
    let (_, batches) = read_stream_batches(open_data_file(stream_path)?)?;

    let mut engine =
        Engine::new(config).map_err(|e| Failure::Usage(format!("engine config: {e}")))?;
    let assignments = engine
        .run(&batches)
        .map_err(|e| Failure::Data(e.to_string()))?;
    let records: Vec<AssignmentRecord> = assignments.iter().map(AssignmentRecord::from).collect();

    let mut out = create_output(out_path)?;
    write_assignments(&mut out, &records)?;
    out.flush()
        .map_err(|e| Failure::Data(format!("write {}: {e}", out_path.display())))?;

    let default_checkpoint = default_checkpoint_path(out_path);
    let checkpoint_path = checkpoint_path.unwrap_or(&default_checkpoint);
    let mut checkpoint = create_output(checkpoint_path)?;
    engine
        .gallery()
        .write_checkpoint(&mut checkpoint)
        .map_err(|e| Failure::Data(e.to_string()))?;
    checkpoint
        .flush()
        .map_err(|e| Failure::Data(format!("write {}: {e}", checkpoint_path.display())))?;
    Ok(())
}

fn default_checkpoint_path(out_path: &Path) -> PathBuf {
    let mut name = out_path.as_os_str().to_owned();
    name.push(".gallery");
    PathBuf::from(name)
}

pub fn eval(
    stream_paths: &[PathBuf],
    assignment_paths: &[PathBuf],
    ccm_out: &Path,
    metrics_out: &Path,
) -> Result<(), Failure> {
    if stream_paths.len() != assignment_paths.len() {
        return Err(Failure::Usage(format!(
            "{} --stream files but {} --assignments files; they pair by position",
            stream_paths.len(),
            assignment_paths.len()
        )));
    }

    let mut builders = Vec::new();
    let mut rows = Vec::new();
    for (fold, (stream_path, assignment_path)) in
        stream_paths.iter().zip(assignment_paths).enumerate()
    {
        let (_, batches) = read_stream_batches(open_data_file(stream_path)?)?;
        let records = read_assignments(open_data_file(assignment_path)?)?;
        let mut builder = CcmBuilder::new();
        builder.accumulate_records(&batches, &records)?;
        let matrix = builder.finalize();
        let mut ccm_file = create_output(&ccm_path(ccm_out, &format!("fold{fold}")))?;
        matrix.write_csv(&mut ccm_file)?;
        ccm_file.flush().map_err(|e| Failure::Data(e.to_string()))?;
        rows.push(MetricsRow {
            fold: format!("fold{fold}"),
            metrics: matrix.metrics()?,
            ghost_leaks: matrix.ghost_leaks(),
        });
        builders.push(builder);
    }

    let pooled = pool(builders.iter());
    let pooled_matrix = pooled.finalize();
    let mut pooled_file = create_output(&ccm_path(ccm_out, "pooled"))?;
    pooled_matrix.write_csv(&mut pooled_file)?;
    pooled_file.flush().map_err(|e| Failure::Data(e.to_string()))?;
    rows.push(MetricsRow {
        fold: "pooled".to_string(),
        metrics: pooled_matrix.metrics()?,
        ghost_leaks: pooled_matrix.ghost_leaks(),
    });

    let mut metrics_file = create_output(metrics_out)?;
    write_metrics_csv(&mut metrics_file, &rows)?;
    metrics_file
        .flush()
        .map_err(|e| Failure::Data(e.to_string()))?;
    Ok(())
}

fn ccm_path(prefix: &Path, tag: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!(".{tag}.csv"));
    PathBuf::from(name)
}

fn parse_grid(spec: &str) -> Result<SweepGrid, Failure> {
    let mut grid = SweepGrid::default();
    for axis in spec.split(';') {
        let axis = axis.trim();
        if axis.is_empty() {
            continue;
        }
        let (name, values) = axis
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("grid axis \"{axis}\" is not name=v1,v2")))?;
        let values = values.trim();
        let bad = |e: &dyn std::fmt::Display| {
            Failure::Usage(format!("grid axis \"{axis}\": bad value: {e}"))
        };
        match name.trim() {
            "t_d" => {
                let parsed: Result<Vec<f64>, _> =
                    values.split(',').map(|v| v.trim().parse()).collect();
                grid.t_d = Some(parsed.map_err(|e| bad(&e))?);
            }
            "t_n" => {
                let parsed: Result<Vec<usize>, _> =
                    values.split(',').map(|v| v.trim().parse()).collect();
                grid.t_n = Some(parsed.map_err(|e| bad(&e))?);
            }
            "s1" => {
                let parsed: Result<Vec<usize>, _> =
                    values.split(',').map(|v| v.trim().parse()).collect();
                grid.s1 = Some(
                    parsed
                        .map_err(|e| bad(&e))?
                        .into_iter()
                        .map(|n| if n == 0 { None } else { Some(n) })
                        .collect(),
                );
            }
            other => {
                return Err(Failure::Usage(format!(
                    "unknown grid axis \"{other}\" (swept axes: t_d, t_n, s1)"
                )))
            }
        }
    }
    Ok(grid)
}

pub fn sweep(
    stream_path: &Path,
    grid_spec: &str,
    out_path: &Path,
    config_path: Option<&Path>,
) -> Result<(), Failure> {
    let base = match config_path {
        Some(p) => EngineConfig::from_str(&read_config_file(p)?)?,
        None => EngineConfig::default(),
    };
    let grid = parse_grid(grid_spec)?;
    let (_, batches) = read_stream_batches(open_data_file(stream_path)?)?;
    let rows = openreid_core::eval::sweep(&batches, &base, &grid)?;
    let mut out = create_output(out_path)?;
    write_sweep_csv(&mut out, &rows)?;
    out.flush()
        .map_err(|e| Failure::Data(format!("write {}: {e}", out_path.display())))?;
    Ok(())
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Descriptor {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(d) = normalize_f64(&v) {
            return d;
        }
    }
}

/// Stored descriptors are spread over up to this many identities.
const BENCH_CLUSTERS: usize = 20;

pub fn bench(
    sizes_spec: &str,
    dim: usize,
    reps: usize,
    probes: usize,
    seed: u64,
    threads: usize,
    out_path: &Path,
) -> Result<(), Failure> {
    let sizes: Vec<usize> = sizes_spec
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("bad --sizes: {e}")))?;
    if sizes.is_empty() || dim == 0 || reps == 0 || probes == 0 {
        return Err(Failure::Usage(
            "sizes, dim, reps, and probes must all be non-zero".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MatchConfig::default();
    let excluded = std::collections::BTreeSet::new();
    let sequential = threads == 1;

    let mut rows = Vec::new();
    for &size in &sizes {
        let clusters = BENCH_CLUSTERS.min(size.max(1));
        let view = if size == 0 {
            GalleryView::from_clusters(std::iter::empty())
        } else {
            GalleryView::from_clusters((0..clusters).map(|i| {
                // Round-robin split so cluster sizes differ by at most one.
                let share = size / clusters + usize::from(i < size % clusters);
                let descriptors = (0..share).map(|_| random_unit(&mut rng, dim)).collect();
                (IdentityId::new(i as u64 + 1), descriptors)
            }))
        };
        let probe_set: Vec<Descriptor> = (0..probes).map(|_| random_unit(&mut rng, dim)).collect();

        let run_once = |probe: &Descriptor| {
            if sequential {
                match_probe_sequential(probe, &view, &excluded, &cfg)
            } else {
                match_probe(probe, &view, &excluded, &cfg)
            }
        };

        // Untimed warm-up pass.
        for probe in &probe_set {
            run_once(probe).map_err(|e| Failure::Data(e.to_string()))?;
        }

        let mut per_probe_times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            for probe in &probe_set {
                std::hint::black_box(run_once(probe).map_err(|e| Failure::Data(e.to_string()))?);
            }
            per_probe_times.push(start.elapsed().as_secs_f64() / probes as f64);
        }
        per_probe_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = per_probe_times[per_probe_times.len() / 2];
        rows.push((size, median));
    }

    let mut out = create_output(out_path)?;
    writeln!(out, "size,dim,probes,reps,per_probe_seconds,matches_per_second")
        .map_err(|e| Failure::Data(e.to_string()))?;
    for &(size, per_probe) in &rows {
        let rate = if per_probe > 0.0 { 1.0 / per_probe } else { f64::INFINITY };
        writeln!(out, "{size},{dim},{probes},{reps},{per_probe:.9},{rate:.3}")
            .map_err(|e| Failure::Data(e.to_string()))?;
    }
    out.flush()
        .map_err(|e| Failure::Data(format!("write {}: {e}", out_path.display())))?;

    // Least-squares slope of per-probe time against gallery size; linear
    // scaling shows up as a stable slope across sizes.
    if rows.len() >= 2 {
        let n = rows.len() as f64;
        let mean_x = rows.iter().map(|&(s, _)| s as f64).sum::<f64>() / n;
        let mean_y = rows.iter().map(|&(_, t)| t).sum::<f64>() / n;
        let cov: f64 = rows
            .iter()
            .map(|&(s, t)| (s as f64 - mean_x) * (t - mean_y))
            .sum();
        let var: f64 = rows
            .iter()
            .map(|&(s, _)| (s as f64 - mean_x).powi(2))
            .sum();
        if var > 0.0 {
            println!("linear fit: per_probe_seconds = {:.3e} * size + offset", cov / var);
        }
    }
    for &(size, per_probe) in &rows {
        println!("size {size}: {per_probe:.9} s/probe");
    }
    Ok(())
}
