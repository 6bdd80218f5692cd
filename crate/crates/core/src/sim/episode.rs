//! One closed-loop inspection episode.

use nalgebra::{Matrix4, Vector3};
use rand_distr::{Distribution, Normal};

use crate::config::ExperimentConfig;
use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::estimation::{fit_plane, robust_fit_plane, PointSample, RansacParams};
use crate::kinematics::{BASE_CENTER, PROBE};
use crate::planner::{
    sample_candidates, score_candidates, select_next, should_stop, PlannerState, Viewpoint,
};
use crate::primitives::{point_plane_distance, Line, Plane};
use crate::seeds;
use crate::sensing::simulate_depth_scan;
use crate::sim::log::{PlanRecord, RunLog, TickRecord};
use crate::sim::reach::{coverage_counts, reach_mask};
use crate::sim::scene::Scene;
use crate::sim::{mark_probe_coverage, step};
use crate::svfi::PlaneBelief;
use crate::worldmap::{Return, VoxelGrid};

/// Allowance below the safety distances for zero-order-hold overshoot.
pub const ZOH_ALLOWANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The best candidate gain fell below the stopping threshold.
    Converged,
    TickBudget,
    /// The solver failed for longer than the abort window.
    EmergencyStop,
    /// No confidently free voxel inside the reach mask.
    NoCandidates,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::TickBudget => "tick_budget",
            Self::EmergencyStop => "emergency_stop",
            Self::NoCandidates => "no_candidates",
        }
    }
}

/// Plane beliefs for the four side walls, refitted from associated returns
/// until each wall holds `max_points` points.
#[derive(Debug, Clone)]
pub struct WallEstimator {
    nominal: [Plane<f64>; 6],
    points: [Vec<PointSample<f64>>; 4],
    beliefs: [PlaneBelief<f64>; 4],
}

impl WallEstimator {
    pub fn new(scene: &Scene, cfg: &ExperimentConfig) -> Self {
        let nominal = scene.walls();
        let e = &cfg.estimation;
        let (sn, sd) = (e.prior_normal_std.powi(2), e.prior_offset_std.powi(2));
        let prior = Matrix4::from_diagonal(&nalgebra::Vector4::new(sn, sn, sn, sd));
        let beliefs = std::array::from_fn(|k| PlaneBelief {
            plane: nominal[k],
            covariance: prior,
        });
        Self {
            nominal,
            points: Default::default(),
            beliefs,
        }
    }

    pub fn beliefs(&self) -> &[PlaneBelief<f64>; 4] {
        &self.beliefs
    }

    pub fn point_counts(&self) -> [usize; 4] {
        std::array::from_fn(|k| self.points[k].len())
    }

    /// Attributes each hit to its nearest nominal wall (if close enough and a
    /// side wall) and refits the beliefs of walls that gained points.
    pub fn ingest(&mut self, returns: &[Return], cfg: &ExperimentConfig, seed: u64) {
        let e = &cfg.estimation;
        let noise = cfg.noise.range_std.max(1e-3);
        let mut touched = [false; 4];
        for r in returns {
            let Return::Hit(p) = r else { continue };
            let (k, d) = self
                .nominal
                .iter()
                .map(|w| point_plane_distance(p, w).abs())
                .enumerate()
                .fold((0, f64::INFINITY), |b, (k, d)| if d < b.1 { (k, d) } else { b });
            if k >= 4 || d >= e.association_threshold {
                continue;
            }
            // A full wall keeps its belief: refitting on replaced points
            // would move the boundary under a robot resting against it.
            if self.points[k].len() < e.max_points {
                self.points[k].push(PointSample::new(*p, noise));
                touched[k] = true;
            }
        }
        for k in (0..4).filter(|&k| touched[k]) {
            if self.points[k].len() < e.min_points {
                continue;
            }
            let fit = if e.robust {
                let params = RansacParams {
                    inlier_threshold: e.inlier_threshold,
                    iterations: e.ransac_iterations,
                    min_points: e.min_points,
                };
                robust_fit_plane(&self.points[k], &params, seeds::derive(seed, &[k as u64, self.points[k].len() as u64]))
            } else {
                fit_plane(&self.points[k], e.min_points)
            };
            if let Ok(mut belief) = fit {
                let nominal = &self.nominal[k];
                if belief.plane.normal.dot(&nominal.normal) < 0.0 {
                    belief.plane.normal = -belief.plane.normal;
                    belief.plane.offset = -belief.plane.offset;
                }
                // Points spread along a thin strip can tilt the fit; such
                // fits are rejected until the patch grows.
                let aligned = belief.plane.normal.dot(&nominal.normal) >= e.max_normal_deviation_deg.to_radians().cos();
                let close = (belief.plane.offset - nominal.offset).abs() <= e.association_threshold;
                if aligned && close {
                    self.beliefs[k] = belief;
                }
            }
        }
    }
}

/// Pipe lines handed to the controller, optionally perturbed.
fn controller_lines(scene: &Scene, std: f64, seed: u64) -> Vec<Line<f64>> {
    if std <= 0.0 {
        return scene.pipes.clone();
    }
    let mut rng = seeds::derived_rng(seed, &[seeds::stream::PERTURBATION]);
    let g = Normal::new(0.0, std).expect("finite std");
    scene
        .pipes
        .iter()
        .map(|l| {
            let dp = Vector3::from_fn(|_, _| g.sample(&mut rng));
            let dd = Vector3::from_fn(|_, _| g.sample(&mut rng));
            Line::new(l.point + dp, l.direction + dd, l.radius)
        })
        .collect()
}

fn stacked(v: &Viewpoint) -> [f64; 6] {
    [
        v.position.x,
        v.position.y,
        v.position.z,
        v.direction.x,
        v.direction.y,
        v.direction.z,
    ]
}

/// Runs one episode to termination.
pub fn run_episode(scene: &Scene, cfg: &ExperimentConfig, seed: u64) -> Result<RunLog> {
    cfg.validate()?;
    let model = cfg.robot.model()?;
    let params = cfg.controller.params(scene.side);
    let base_limit = params.d_safe_base - ZOH_ALLOWANCE;
    let probe_limit = params.d_safe_probe - ZOH_ALLOWANCE;
    let mut controller = Controller::new(model.clone(), params.clone())?;
    let mut grid = VoxelGrid::cube(scene.side, cfg.map.resolution, cfg.map.occupancy())?;
    let mask = reach_mask(&grid, &model, scene, &params, cfg.sim.reach_samples, seed)?;
    let lines = controller_lines(scene, cfg.sim.pipe_perturbation_std, seed);
    let mut walls = WallEstimator::new(scene, cfg);
    let mut planner = PlannerState::new(&cfg.planner, cfg.sim.rate_hz);
    let coverage_info = cfg.planner.coverage_info();
    let dt = 1.0 / cfg.sim.rate_hz;
    let max_ticks = (cfg.sim.max_time_s * cfg.sim.rate_hz).round() as usize;
    let abort_ticks = (cfg.sim.estop_abort_s * cfg.sim.rate_hz).round() as usize;
    let true_walls = scene.walls();
    let base_att = model.attachment(BASE_CENTER)?.clone();
    let probe_att = model.attachment(PROBE)?.clone();

    let initial_census = grid.census(coverage_info);
    let mut q = scene.start.clone();
    let mut ticks = Vec::new();
    let mut plans = Vec::new();
    let mut row_labels = Vec::new();
    let mut need_plan = true;
    let mut estop_streak = 0usize;
    let mut hold_since: Option<f64> = None;
    let mut termination = Termination::TickBudget;

    for k in 0..max_ticks {
        let t = k as f64 * dt;
        let chain = model.chain(&q)?;
        let tool = chain.tool;
        let (probe_pt, _) = model.attachment_jacobian(&q, &chain, &probe_att)?;
        let (base_pt, _) = model.attachment_jacobian(&q, &chain, &base_att)?;

        if k % cfg.sim.scan_every == 0 && grid.voxel_of(&tool.position).is_some() {
            let scan_seed = seeds::derive(seed, &[seeds::stream::DEPTH_SCAN, k as u64]);
            let returns = simulate_depth_scan(scene, &tool.position, &tool.direction, &cfg.depth, &cfg.noise, scan_seed);
            grid.integrate_depth_scan(&tool.position, &returns, cfg.depth.max_range)?;
            walls.ingest(&returns, cfg, seeds::derive(seed, &[seeds::stream::RANSAC, k as u64]));
        }

        if need_plan {
            let iteration = planner.iteration;
            let cand_seed = seeds::derive(seed, &[seeds::stream::CANDIDATES, iteration]);
            match sample_candidates(&grid, Some(&mask), cfg.planner.candidates, cand_seed) {
                Ok(mut cands) => {
                    hold_since = None;
                    score_candidates(&grid, &mut cands, &cfg.depth, &cfg.probe, &cfg.planner, seed, iteration)?;
                    let (_, best, setpoint) = select_next(&cands).expect("candidate count is positive");
                    let census = grid.census(coverage_info);
                    let gains = [best.g_v, best.g_c, best.g_w];
                    plans.push(PlanRecord::from_census(iteration, t, &census, gains, stacked(&best)));
                    if should_stop(best.g_w, &cfg.planner) {
                        grid.mark_unknown_residual();
                        planner.stopped = true;
                        termination = Termination::Converged;
                        break;
                    }
                    planner.set(setpoint);
                    need_plan = false;
                }
                // Too little of the map is known yet; keep scanning in place.
                Err(Error::NoFreeVoxels) => {
                    if t - *hold_since.get_or_insert(t) > cfg.planner.stall_window_s {
                        termination = Termination::NoCandidates;
                        break;
                    }
                }
                Err(e) => return Err(e),
            }
        }

        mark_probe_coverage(&mut grid, &probe_pt, cfg.probe.radius);

        // Until the map offers a candidate, hold the current tool pose.
        let target = planner.setpoint.unwrap_or(tool);
        let tick = controller.control_step(&q, &target, walls.beliefs(), &lines)?;
        if row_labels.is_empty() {
            row_labels = tick.rows.iter().map(|r| r.label.clone()).collect();
        }
        let out = step(&model, &q, &tick.u, dt);
        ticks.push(TickRecord {
            t,
            q: q.to_vector().iter().copied().collect(),
            u: tick.u.iter().copied().collect(),
            err_norm: tick.error_norm,
            distances: tick.rows.iter().map(|r| r.distance.unwrap_or(f64::NAN)).collect(),
            margins: tick.rows.iter().map(|r| r.margin).collect(),
            slack_norm: tick.slack_norm(),
            status: tick.status.as_str(),
            clamped: out.clamped,
            true_base: std::array::from_fn(|i| point_plane_distance(&base_pt, &true_walls[i])),
            true_probe: std::array::from_fn(|i| point_plane_distance(&probe_pt, &true_walls[i])),
        });

        if tick.emergency_stop() {
            estop_streak += 1;
            if estop_streak > abort_ticks {
                termination = Termination::EmergencyStop;
                break;
            }
        } else {
            estop_streak = 0;
        }
        q = out.q;
        if planner.should_replan(tick.error_norm, &cfg.planner) {
            need_plan = true;
        }
    }

    let final_census = grid.census(coverage_info);
    let (reachable_occupied, reachable_covered) = coverage_counts(&grid, &mask, cfg.probe.radius);
    Ok(RunLog {
        seed,
        n_config: model.dim(),
        row_labels,
        ticks,
        plans,
        termination: termination.as_str().to_string(),
        initial_census,
        final_census,
        reachable_occupied,
        reachable_covered,
        base_limit,
        probe_limit,
        grid,
        mask,
    })
}
