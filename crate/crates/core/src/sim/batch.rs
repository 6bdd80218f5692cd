//! Repeated episodes with derived seeds and per-time-bin aggregates.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::seeds;
use crate::sim::episode::run_episode;
use crate::sim::log::RunLog;
use crate::sim::scene::Scene;

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    seeds::derive(master, &[seeds::stream::TRIALS, trial as u64])
}

/// Runs `trials` episodes. Results are in trial order and do not depend on
/// `parallel`.
pub fn run_batch(scene: &Scene, cfg: &ExperimentConfig, master: u64, trials: usize, parallel: bool) -> Result<Vec<RunLog>> {
    let run = |i: usize| run_episode(scene, cfg, trial_seed(master, i));
    if parallel {
        (0..trials).into_par_iter().map(run).collect()
    } else {
        (0..trials).map(run).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinRow {
    /// Bin end as a fraction of each run's duration.
    pub time_fraction: f64,
    pub unknown_fraction: Spread,
    pub covered_fraction: Spread,
    pub mean_entropy: Spread,
}

/// Unknown fraction, covered fraction of occupied voxels and mean entropy at
/// normalized time `s`: the last planning census at or before `s · duration`,
/// the initial census before any, the final census at `s = 1`.
fn state_at(log: &RunLog, s: f64) -> [f64; 3] {
    let total = log.initial_census.total().max(1) as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let horizon = s * log.duration();
    let c = &log.initial_census;
    let mut state = [c.unknown as f64 / total, 0.0, c.mean_entropy];
    for p in log.plans.iter().take_while(|p| p.t <= horizon) {
        state = [p.unknown as f64 / total, ratio(p.covered, p.occupied), p.mean_entropy];
    }
    if s >= 1.0 {
        let c = &log.final_census;
        state = [c.unknown as f64 / total, ratio(c.covered, c.occupied), c.mean_entropy];
    }
    state
}

pub fn aggregate(logs: &[RunLog], bins: usize) -> Vec<BinRow> {
    (0..=bins)
        .map(|b| {
            let s = b as f64 / bins.max(1) as f64;
            let states: Vec<[f64; 3]> = logs.iter().map(|l| state_at(l, s)).collect();
            let col = |i: usize| Spread::of(&states.iter().map(|x| x[i]).collect::<Vec<_>>());
            BinRow {
                time_fraction: s,
                unknown_fraction: col(0),
                covered_fraction: col(1),
                mean_entropy: col(2),
            }
        })
        .collect()
}

pub const AGGREGATE_SCHEMA: &str = "pipescan-aggregate v1";

pub fn write_aggregate<W: Write>(rows: &[BinRow], mut w: W) -> Result<()> {
    writeln!(w, "# {AGGREGATE_SCHEMA}")?;
    let mut csv = csv::Writer::from_writer(w);
    let err = |e: csv::Error| crate::Error::Io(std::io::Error::other(e));
    csv.write_record([
        "time_fraction",
        "unknown_mean",
        "unknown_min",
        "unknown_max",
        "covered_mean",
        "covered_min",
        "covered_max",
        "entropy_mean",
        "entropy_min",
        "entropy_max",
    ])
    .map_err(err)?;
    for r in rows {
        let u = r.unknown_fraction;
        let c = r.covered_fraction;
        let e = r.mean_entropy;
        csv.write_record(
            [r.time_fraction, u.mean, u.min, u.max, c.mean, c.min, c.max, e.mean, e.min, e.max]
                .map(|x| format!("{x:?}")),
        )
        .map_err(err)?;
    }
    csv.flush()?;
    Ok(())
}
