//! Command-line surface for the identity-resolution pipeline.
//!
//! Subcommands map one-to-one onto the pipeline stages: `synth` writes a
//! ground-truthed stream, `run` resolves it into assignments, `eval` scores
//! assignment files, `sweep` grids engine parameters, and `bench` measures
//! matching throughput. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data error.

mod cmds;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "openreid", version, about = "Streaming face identity resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic descriptor stream with truth labels.
    Synth {
        /// Generator config (key=value file).
        #[arg(long)]
        config: std::path::PathBuf,
        /// Stream file to write.
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Resolve a stream into identity assignments.
    Run {
        /// Input stream file.
        #[arg(long)]
        stream: std::path::PathBuf,
        /// Engine config (key=value file).
        #[arg(long)]
        config: std::path::PathBuf,
        /// Assignment file to write.
        #[arg(long)]
        out: std::path::PathBuf,
        /// Final gallery checkpoint to write (default: <out>.gallery).
        #[arg(long)]
        checkpoint: Option<std::path::PathBuf>,
    },
    /// Score assignment files against their streams.
    Eval {
        /// Stream file; repeat once per fold.
        #[arg(long, required = true)]
        stream: Vec<std::path::PathBuf>,
        /// Assignment file; repeat once per fold, paired with --stream by
        /// position.
        #[arg(long, required = true)]
        assignments: Vec<std::path::PathBuf>,
        /// Prefix for confusion-matrix CSVs (<prefix>.fold<N>.csv and
        /// <prefix>.pooled.csv).
        #[arg(long)]
        ccm_out: std::path::PathBuf,
        /// Metrics CSV (one row per fold plus a pooled row).
        #[arg(long)]
        metrics_out: std::path::PathBuf,
    },
    /// Evaluate a parameter grid over one stream.
    Sweep {
        /// Input stream file.
        #[arg(long)]
        stream: std::path::PathBuf,
        /// Grid to sweep: semicolon-separated axes, comma-separated values,
        /// e.g. "t_d=1.0,1.2,1.4;t_n=2,3".
        #[arg(long)]
        grid: String,
        /// Sweep CSV to write.
        #[arg(long)]
        out: std::path::PathBuf,
        /// Base engine config for unswept parameters (defaults otherwise).
        #[arg(long)]
        config: Option<std::path::PathBuf>,
    },
    /// Measure per-probe matching time across gallery sizes.
    Bench {
        /// Comma-separated total stored-descriptor counts.
        #[arg(long)]
        sizes: String,
        /// Descriptor width.
        #[arg(long, default_value_t = 4096)]
        dim: usize,
        /// Timed repetitions per size; the median is reported.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Probes per repetition.
        #[arg(long, default_value_t = 32)]
        probes: usize,
        /// RNG seed for gallery and probe vectors.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// 1 forces the sequential scan; anything else uses the default
        /// dispatch.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Timing CSV to write.
        #[arg(long)]
        out: std::path::PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; anything else is a
            // usage error.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Synth { config, out } => cmds::synth(&config, &out),
        Command::Run {
            stream,
            config,
            out,
            checkpoint,
        } => cmds::run(&stream, &config, &out, checkpoint.as_deref()),
        Command::Eval {
            stream,
            assignments,
            ccm_out,
            metrics_out,
        } => cmds::eval(&stream, &assignments, &ccm_out, &metrics_out),
        Command::Sweep {
            stream,
            grid,
            out,
            config,
        } => cmds::sweep(&stream, &grid, &out, config.as_deref()),
        Command::Bench {
            sizes,
            dim,
            reps,
            probes,
            seed,
            threads,
            out,
        } => cmds::bench(&sizes, dim, reps, probes, seed, threads, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
