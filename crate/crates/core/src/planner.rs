//! Coverage-first next-best-view selection.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::TaskVector;
use crate::seeds;
use crate::sensing::{frustum_rays, sphere_rays, DepthSensorModel, ProbeSensorModel};
use crate::worldmap::{bernoulli_entropy, VoxelGrid, VoxelIndex, VoxelState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewpoint {
    pub position: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub g_v: f64,
    pub g_c: f64,
    pub g_w: f64,
}

impl Viewpoint {
    pub fn new(position: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self {
            position,
            direction: direction.normalize(),
            g_v: 0.0,
            g_c: 0.0,
            g_w: 0.0,
        }
    }

    pub fn setpoint(&self) -> TaskVector<f64> {
        TaskVector::new(self.position, self.direction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerParams {
    pub beta: f64,
    pub candidates: usize,
    pub stop_gain: f64,
    pub error_threshold: f64,
    pub stall_window_s: f64,
    pub stall_tolerance: f64,
    /// Credit uncovered occupied voxels with `ln 0.5` instead of `ln 2`.
    pub literal_coverage_sign: bool,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            beta: 0.75,
            candidates: 500,
            stop_gain: 1.0,
            error_threshold: 1e-3,
            stall_window_s: 4.0,
            stall_tolerance: 1e-4,
            literal_coverage_sign: false,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter("beta must lie in [0, 1]".into()));
        }
        if self.candidates == 0 || !(self.stall_window_s > 0.0) || !(self.error_threshold > 0.0) {
            return Err(Error::InvalidParameter("planner counts and thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Information credited to an occupied, uncovered voxel.
    pub fn coverage_info(&self) -> f64 {
        if self.literal_coverage_sign {
            0.5f64.ln()
        } else {
            2f64.ln()
        }
    }
}

/// Occupancy entropy of a voxel that has never been observed, else zero.
pub fn visual_voxel_info(pr: f64, observed: bool) -> f64 {
    if observed {
        0.0
    } else {
        bernoulli_entropy(pr)
    }
}

/// `ln 2` for an occupied voxel not yet covered, else zero.
pub fn coverage_voxel_info(state: VoxelState, covered: bool) -> f64 {
    coverage_voxel_info_with(state, covered, 2f64.ln())
}

pub fn coverage_voxel_info_with(state: VoxelState, covered: bool, value: f64) -> f64 {
    if state == VoxelState::Occupied && !covered {
        value
    } else {
        0.0
    }
}

pub fn weighted_gain(g_v: f64, g_c: f64, beta: f64) -> f64 {
    beta * g_v + (1.0 - beta) * g_c
}

/// Visual information along one traversal; a terminal occupied voxel is
/// excluded.
pub fn visual_ray_gain(grid: &VoxelGrid, voxels: &[VoxelIndex], hit: bool) -> f64 {
    let upto = if hit { voxels.len() - 1 } else { voxels.len() };
    voxels[..upto]
        .iter()
        .map(|&v| visual_voxel_info(grid.probability(v), grid.is_observed(v)))
        .sum()
}

/// Coverage information along one traversal, terminal voxel included.
pub fn coverage_ray_gain(grid: &VoxelGrid, voxels: &[VoxelIndex], value: f64) -> f64 {
    voxels
        .iter()
        .map(|&v| coverage_voxel_info_with(grid.state(v), grid.is_covered(v), value))
        .sum()
}

pub fn visual_gain(grid: &VoxelGrid, v: &Viewpoint, model: &DepthSensorModel, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for d in frustum_rays(model, &v.direction, model.rays, seed) {
        let trace = grid.raycast(&v.position, &d, model.max_range)?;
        total += visual_ray_gain(grid, &trace.voxels, trace.hit);
    }
    Ok(total)
}

pub fn coverage_gain_with(
    grid: &VoxelGrid,
    v: &Viewpoint,
    model: &ProbeSensorModel,
    seed: u64,
    value: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for d in sphere_rays(model.rays, seed) {
        let trace = grid.raycast(&v.position, &d, model.radius)?;
        total += coverage_ray_gain(grid, &trace.voxels, value);
    }
    Ok(total)
}

pub fn coverage_gain(grid: &VoxelGrid, v: &Viewpoint, model: &ProbeSensorModel, seed: u64) -> Result<f64> {
    coverage_gain_with(grid, v, model, seed, 2f64.ln())
}

/// Direction from pan in `[-π, π)` and tilt in `[-π/2, π/2]`.
pub fn pan_tilt_direction(pan: f64, tilt: f64) -> Vector3<f64> {
    Vector3::new(tilt.cos() * pan.cos(), tilt.cos() * pan.sin(), tilt.sin())
}

/// `n` viewpoints at centers of uniformly drawn eligible voxels with uniform
/// pan/tilt directions. Eligible voxels are confidently free and, if a mask
/// is given, inside it.
pub fn sample_candidates(grid: &VoxelGrid, mask: Option<&[bool]>, n: usize, seed: u64) -> Result<Vec<Viewpoint>> {
    let eligible: Vec<usize> = (0..grid.len())
        .filter(|&i| mask.is_none_or(|m| m[i]) && grid.is_confidently_free(grid.unlinear(i)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoFreeVoxels);
    }
    let mut rng = seeds::rng(seed);
    Ok((0..n)
        .map(|_| {
            let i = eligible[rng.random_range(0..eligible.len())];
            let pan = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let tilt = rng.random_range(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2);
            Viewpoint::new(grid.center(grid.unlinear(i)), pan_tilt_direction(pan, tilt))
        })
        .collect())
}

/// Ray seeds of candidate `index` in planning iteration `iteration`.
pub fn candidate_seeds(master: u64, iteration: u64, index: u64) -> (u64, u64) {
    (
        seeds::derive(master, &[seeds::stream::VISUAL_RAYS, iteration, index]),
        seeds::derive(master, &[seeds::stream::COVERAGE_RAYS, iteration, index]),
    )
}

/// Scores every candidate in parallel over a read-only grid.
pub fn score_candidates(
    grid: &VoxelGrid,
    candidates: &mut [Viewpoint],
    depth: &DepthSensorModel,
    probe: &ProbeSensorModel,
    params: &PlannerParams,
    master: u64,
    iteration: u64,
) -> Result<()> {
    let value = params.coverage_info();
    candidates
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(i, v)| -> Result<()> {
            let (sv, sc) = candidate_seeds(master, iteration, i as u64);
            v.g_v = visual_gain(grid, v, depth, sv)?;
            v.g_c = coverage_gain_with(grid, v, probe, sc, value)?;
            v.g_w = weighted_gain(v.g_v, v.g_c, params.beta);
            Ok(())
        })
}

/// Index of the largest `g_w`, ties to the lowest index.
pub fn select_next(candidates: &[Viewpoint]) -> Option<(usize, Viewpoint, TaskVector<f64>)> {
    let mut best: Option<usize> = None;
    for (i, v) in candidates.iter().enumerate() {
        if best.is_none_or(|b| v.g_w > candidates[b].g_w) {
            best = Some(i);
        }
    }
    best.map(|i| (i, candidates[i], candidates[i].setpoint()))
}

pub fn should_stop(best_gain: f64, params: &PlannerParams) -> bool {
    best_gain < params.stop_gain
}

/// Set-point switching bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerState {
    pub setpoint: Option<TaskVector<f64>>,
    pub iteration: u64,
    history: VecDeque<f64>,
    window: usize,
    pub stopped: bool,
}

impl PlannerState {
    pub fn new(params: &PlannerParams, rate_hz: f64) -> Self {
        let window = (params.stall_window_s * rate_hz).round().max(1.0) as usize;
        Self {
            setpoint: None,
            iteration: 0,
            history: VecDeque::with_capacity(window),
            window,
            stopped: false,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Records the tick's error norm and reports whether to replan: the set
    /// point is reached, or the error has stayed within the stall tolerance
    /// over a full window.
    pub fn should_replan(&mut self, error_norm: f64, params: &PlannerParams) -> bool {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(error_norm);
        if error_norm < params.error_threshold {
            return true;
        }
        if self.history.len() == self.window {
            let (lo, hi) = self
                .history
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
            return hi - lo < params.stall_tolerance;
        }
        false
    }

    pub fn set(&mut self, setpoint: TaskVector<f64>) {
        self.setpoint = Some(setpoint);
        self.iteration += 1;
        self.history.clear();
    }
}
