//! `pipescan`: run inspection episodes, batches and validation suites.
//!
//! Exit codes: 0 success, 1 validation or run failure, 2 configuration error.
//! Failures also print a one-line JSON error record on stderr.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use pipescan_core::config::ExperimentConfig;
use pipescan_core::sim::batch::{aggregate, run_batch, trial_seed, write_aggregate};
use pipescan_core::sim::log::RunLog;
use pipescan_core::sim::run_episode;
use pipescan_core::sim::scene::Scene;
use pipescan_core::validation::Suite;
use pipescan_core::Error;

/// Environment variable that sets the root for relative output directories.
const OUT_ROOT_ENV: &str = "PIPESCAN_OUT_ROOT";

/// Normalized-time bins in the batch aggregate.
const AGGREGATE_BINS: usize = 20;

#[derive(Parser)]
#[command(name = "pipescan", version, about = "Chance-constrained inspection of a pipe cell by a simulated mobile manipulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its tick log, plan log, grid snapshot and summary.
    Run {
        /// Experiment config (TOML); scene files resolve relative to it.
        #[arg(long)]
        config: PathBuf,
        /// Seed; defaults to the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; relative paths resolve against $PIPESCAN_OUT_ROOT
        /// when set. An existing non-empty directory gets a numeric suffix.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a validation suite and print a pass/fail table.
    Validate {
        /// chance, jacobians, qp or ig-oracle.
        #[arg(long, value_parser = parse_suite)]
        suite: Suite,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run seeded trials and write per-trial outputs plus an aggregate CSV.
    Batch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        /// Run trials on a thread pool; results are identical to a serial run.
        #[arg(long)]
        parallel: bool,
        /// Master seed; trial seeds derive from it.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) | Failure::Run(_) => 1,
            Failure::Config(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Probability(_) => Failure::Config(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: &'a str,
    exit_code: u8,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Validate { suite, seed } => cmd_validate(suite, seed),
        Command::Batch {
            config,
            trials,
            parallel,
            seed,
            out,
        } => cmd_batch(&config, trials as usize, parallel, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, message) = match &f {
                Failure::Config(m) => ("config", m),
                Failure::Run(m) => ("run", m),
                Failure::Validation(m) => ("validation", m),
            };
            let record = ErrorRecord {
                error: kind,
                message,
                exit_code: f.code(),
            };
            eprintln!("{}", serde_json::to_string(&record).expect("record serializes"));
            ExitCode::from(f.code())
        }
    }
}

fn load(config: &Path) -> Result<(ExperimentConfig, Scene), Failure> {
    ExperimentConfig::load(config).map_err(|e| Failure::Config(e.to_string()))
}

fn default_out(cfg: &ExperimentConfig, config: &Path, label: &str) -> PathBuf {
    if let Some(dir) = &cfg.output_dir {
        return PathBuf::from(dir);
    }
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    PathBuf::from("runs").join(format!("{stem}-{label}"))
}

/// Applies the output root and picks a directory that does not yet hold
/// files, appending `-1`, `-2`, ... as needed.
fn fresh_dir(requested: PathBuf) -> PathBuf {
    let base = match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if requested.is_relative() => PathBuf::from(root).join(requested),
        _ => requested,
    };
    let taken = |p: &Path| p.exists() && fs::read_dir(p).map_or(true, |mut d| d.next().is_some());
    if !taken(&base) {
        return base;
    }
    let name = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    (1..)
        .map(|i| base.with_file_name(format!("{name}-{i}")))
        .find(|p| !taken(p))
        .expect("unbounded suffix search")
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> pipescan_core::Result<()>) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_run(dir: &Path, log: &RunLog, cfg: &ExperimentConfig) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    write_file(&dir.join("ticks.csv"), |w| log.write_ticks(w))?;
    write_file(&dir.join("plans.csv"), |w| log.write_plans(w))?;
    write_file(&dir.join("grid.txt"), |w| log.grid.write_snapshot(w))?;
    write_file(&dir.join("summary.json"), |w| log.write_summary(w))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let (cfg, scene) = load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let dir = fresh_dir(out.unwrap_or_else(|| default_out(&cfg, config, &format!("seed{seed}"))));
    // Outputs are written only after the episode completes.
    let log = run_episode(&scene, &cfg, seed)?;
    write_run(&dir, &log, &cfg)?;
    let s = log.summary();
    println!(
        "{}: {} after {:.2} s, coverage {:.3}, unknown {}, violations base/probe {}/{}",
        dir.display(),
        s.termination,
        s.duration_s,
        s.coverage_fraction,
        s.final_unknown,
        s.base_violations,
        s.probe_violations
    );
    Ok(())
}

fn cmd_validate(suite: Suite, seed: u64) -> Result<(), Failure> {
    let report = suite.run(seed)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("suite {} failed", suite.as_str())))
    }
}

fn cmd_batch(config: &Path, trials: usize, parallel: bool, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let (cfg, scene) = load(config)?;
    let master = seed.unwrap_or(cfg.seed);
    let dir = fresh_dir(out.unwrap_or_else(|| default_out(&cfg, config, &format!("batch{master}"))));
    let logs = run_batch(&scene, &cfg, master, trials, parallel)?;
    for (i, log) in logs.iter().enumerate() {
        write_run(&dir.join(format!("trial-{i:03}")), log, &cfg)?;
    }
    write_file(&dir.join("aggregate.csv"), |w| write_aggregate(&aggregate(&logs, AGGREGATE_BINS), w))?;
    for (i, log) in logs.iter().enumerate() {
        let s = log.summary();
        println!(
            "trial {i} seed {}: {} after {:.2} s, coverage {:.3}",
            trial_seed(master, i),
            s.termination,
            s.duration_s,
            s.coverage_fraction
        );
    }
    println!("{}", dir.display());
    Ok(())
}
