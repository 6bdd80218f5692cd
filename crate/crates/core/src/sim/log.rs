//! Per-tick and per-plan records of an episode, with CSV/JSON writers.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::worldmap::{Census, VoxelGrid};

pub const TICK_SCHEMA: &str = "pipescan-ticks v1";
pub const PLAN_SCHEMA: &str = "pipescan-plans v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub err_norm: f64,
    /// Per constraint row, in [`RunLog::row_labels`] order; NaN where a row
    /// carries no distance.
    pub distances: Vec<f64>,
    pub margins: Vec<f64>,
    pub slack_norm: f64,
    pub status: &'static str,
    pub clamped: bool,
    /// True distances of the base center to the four side walls.
    pub true_base: [f64; 4],
    /// True distances of the probe to all six walls.
    pub true_probe: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanRecord {
    pub iteration: u64,
    pub t: f64,
    pub unknown: usize,
    pub free: usize,
    pub occupied: usize,
    pub residual: usize,
    pub covered: usize,
    pub mean_entropy: f64,
    pub g_v: f64,
    pub g_c: f64,
    pub g_w: f64,
    pub setpoint: [f64; 6],
}

impl PlanRecord {
    pub fn from_census(iteration: u64, t: f64, c: &Census, gains: [f64; 3], setpoint: [f64; 6]) -> Self {
        Self {
            iteration,
            t,
            unknown: c.unknown,
            free: c.free,
            occupied: c.occupied,
            residual: c.residual,
            covered: c.covered,
            mean_entropy: c.mean_entropy,
            g_v: gains[0],
            g_c: gains[1],
            g_w: gains[2],
            setpoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub seed: u64,
    pub termination: String,
    pub ticks: usize,
    pub duration_s: f64,
    pub planning_iterations: usize,
    pub initial_unknown: usize,
    pub final_unknown: usize,
    pub final_free: usize,
    pub final_occupied: usize,
    pub final_residual: usize,
    pub final_covered: usize,
    pub reachable_occupied: usize,
    pub reachable_covered: usize,
    pub coverage_fraction: f64,
    pub emergency_stops: usize,
    pub max_slack: f64,
    pub base_violations: usize,
    pub probe_violations: usize,
    pub min_true_base_distance: f64,
    pub min_true_probe_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub seed: u64,
    pub n_config: usize,
    pub row_labels: Vec<String>,
    pub ticks: Vec<TickRecord>,
    pub plans: Vec<PlanRecord>,
    pub termination: String,
    pub initial_census: Census,
    pub final_census: Census,
    pub reachable_occupied: usize,
    pub reachable_covered: usize,
    /// Distance thresholds used for the violation counts.
    pub base_limit: f64,
    pub probe_limit: f64,
    pub grid: VoxelGrid,
    /// Candidate reach mask, indexed like the grid.
    pub mask: Vec<bool>,
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

impl RunLog {
    pub fn duration(&self) -> f64 {
        self.ticks.last().map_or(0.0, |t| t.t)
    }

    pub fn base_violations(&self) -> usize {
        self.ticks
            .iter()
            .filter(|t| t.true_base.iter().any(|d| *d < self.base_limit))
            .count()
    }

    pub fn probe_violations(&self) -> usize {
        self.ticks
            .iter()
            .filter(|t| t.true_probe.iter().any(|d| *d < self.probe_limit))
            .count()
    }

    pub fn min_true_base(&self) -> f64 {
        self.ticks
            .iter()
            .flat_map(|t| t.true_base.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_true_probe(&self) -> f64 {
        self.ticks
            .iter()
            .flat_map(|t| t.true_probe.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn coverage_fraction(&self) -> f64 {
        if self.reachable_occupied == 0 {
            1.0
        } else {
            self.reachable_covered as f64 / self.reachable_occupied as f64
        }
    }

    pub fn summary(&self) -> Summary {
        let c = &self.final_census;
        Summary {
            schema: "pipescan-summary v1",
            seed: self.seed,
            termination: self.termination.clone(),
            ticks: self.ticks.len(),
            duration_s: self.duration(),
            planning_iterations: self.plans.len(),
            initial_unknown: self.initial_census.unknown,
            final_unknown: c.unknown,
            final_free: c.free,
            final_occupied: c.occupied,
            final_residual: c.residual,
            final_covered: c.covered,
            reachable_occupied: self.reachable_occupied,
            reachable_covered: self.reachable_covered,
            coverage_fraction: self.coverage_fraction(),
            emergency_stops: self.ticks.iter().filter(|t| t.status != "optimal").count(),
            max_slack: self.ticks.iter().map(|t| t.slack_norm).fold(0.0, f64::max),
            base_violations: self.base_violations(),
            probe_violations: self.probe_violations(),
            min_true_base_distance: self.min_true_base(),
            min_true_probe_distance: self.min_true_probe(),
        }
    }

    pub fn tick_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..self.n_config).map(|i| format!("q{i}")));
        h.extend((0..self.n_config).map(|i| format!("u{i}")));
        h.push("err_norm".into());
        for l in &self.row_labels {
            h.push(format!("dist[{l}]"));
            h.push(format!("margin[{l}]"));
        }
        h.push("slack_norm".into());
        h.push("status".into());
        h.push("clamped".into());
        h.extend((0..4).map(|i| format!("true_base_wall{i}")));
        h.extend((0..6).map(|i| format!("true_probe_wall{i}")));
        h
    }

    /// Tick CSV: a schema comment line, then a header row naming every column.
    pub fn write_ticks<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {TICK_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(self.tick_header()).map_err(csv_err)?;
        for t in &self.ticks {
            let mut row = vec![fmt(t.t)];
            row.extend(t.q.iter().map(|x| fmt(*x)));
            row.extend(t.u.iter().map(|x| fmt(*x)));
            row.push(fmt(t.err_norm));
            for (d, m) in t.distances.iter().zip(&t.margins) {
                row.push(fmt(*d));
                row.push(fmt(*m));
            }
            row.push(fmt(t.slack_norm));
            row.push(t.status.to_string());
            row.push(u8::from(t.clamped).to_string());
            row.extend(t.true_base.iter().map(|x| fmt(*x)));
            row.extend(t.true_probe.iter().map(|x| fmt(*x)));
            csv.write_record(row).map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_plans<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {PLAN_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "iteration", "t", "unknown", "free", "occupied", "residual", "covered", "mean_entropy", "g_v", "g_c",
            "g_w", "sp_x", "sp_y", "sp_z", "sp_nx", "sp_ny", "sp_nz",
        ])
        .map_err(csv_err)?;
        for p in &self.plans {
            let mut row = vec![
                p.iteration.to_string(),
                fmt(p.t),
                p.unknown.to_string(),
                p.free.to_string(),
                p.occupied.to_string(),
                p.residual.to_string(),
                p.covered.to_string(),
                fmt(p.mean_entropy),
                fmt(p.g_v),
                fmt(p.g_c),
                fmt(p.g_w),
            ];
            row.extend(p.setpoint.iter().map(|x| fmt(*x)));
            csv.write_record(row).map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.summary())
            .map_err(|e| crate::Error::Io(std::io::Error::other(e)))?;
        writeln!(w)?;
        Ok(())
    }

    /// Byte serialization of the complete log, used for determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_ticks(&mut buf).expect("in-memory write");
        self.write_plans(&mut buf).expect("in-memory write");
        self.write_summary(&mut buf).expect("in-memory write");
        self.grid.write_snapshot(&mut buf).expect("in-memory write");
        buf
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}
