//! `piacn` command-line driver: corpus generation, curve fitting, training,
//! evaluation and plot-ready exports.
//!
//! Human-readable progress goes to standard error and machine-readable JSON
//! to standard output. Exit codes: 0 ok, 2 config or input error, 3 I/O
//! error, 4 non-convergence, 5 checkpoint incompatibility.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "piacn", version, about = "Physics-informed cascade popularity prediction")]
struct Cli {
    /// JSON run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the corpus seed and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus and its ground-truth sidecar.
    Generate,
    /// Fit a Richards curve to a `time,value` CSV.
    Fit { csv: PathBuf },
    /// Train on the configured corpus and write a checkpoint.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export learned curves, parameters and cluster assignments as CSV.
    Export {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn init_logging() {
    let level = match std::env::var("PIACN_LOG").as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("quiet") => log::LevelFilter::Off,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Command::Fit { csv } = &cli.command {
        return commands::fit(csv, &cfg.fit);
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out).map_err(error::io_err(&cli.out))?;
    match cli.command {
        Command::Generate => commands::generate(&cfg, &cli.out),
        Command::Train => commands::train(&cfg, &cli.out),
        Command::Eval { checkpoint } => commands::eval(&cfg, &cli.out, checkpoint),
        Command::Export { checkpoint } => commands::export(&cfg, &cli.out, checkpoint),
        Command::Fit { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
