//! Validation suites comparing production routines against the references in
//! [`crate::oracle`], plus the free-space convergence run.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::controller::{Controller, ControllerParams};
use crate::error::{Error, Result};
use crate::kinematics::{default_robot, nonholonomic_row, Configuration, RobotModel, TaskVector};
use crate::oracle;
use crate::planner::{coverage_gain, visual_gain, Viewpoint};
use crate::primitives::{point_line_distance, point_line_vfi_row, Line};
use crate::qpsolver::{kkt_residuals, QProblem, QpStatus};
use crate::seeds;
use crate::sensing::{DepthSensorModel, ProbeSensorModel};
use crate::sim::chance::{run_chance_validation, ChanceValidationParams};
use crate::svfi::std_normal_quantile;
use crate::worldmap::{OccupancyParams, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Chance,
    Jacobians,
    Qp,
    IgOracle,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Chance, Suite::Jacobians, Suite::Qp, Suite::IgOracle];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Chance => "chance",
            Self::Jacobians => "jacobians",
            Self::Qp => "qp",
            Self::IgOracle => "ig-oracle",
        }
    }

    pub fn run(&self, seed: u64) -> Result<SuiteReport> {
        match self {
            Self::Chance => chance_suite(&ChanceValidationParams::default(), seed),
            Self::Jacobians => jacobian_suite(100, seed),
            Self::Qp => qp_suite(1000, seed),
            Self::IgOracle => ig_oracle_suite(50, seed),
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown suite `{s}`")))
    }
}

/// One checked quantity: `pass` iff `value <= tolerance` (or `>=` for
/// lower-bounded checks, as recorded in `comparison`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub comparison: &'static str,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: "<=",
            tolerance,
            pass: value <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: ">=",
            tolerance,
            pass: value >= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {}", self.suite)?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<4} {:<44} {:>14.6e} {} {:.3e}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.comparison,
                c.tolerance
            )?;
        }
        write!(f, "  {}", if self.passed() { "all checks passed" } else { "FAILED" })
    }
}

pub fn chance_suite(params: &ChanceValidationParams, seed: u64) -> Result<SuiteReport> {
    let report = run_chance_validation(params, seed)?;
    let mut checks = Vec::new();
    for &alpha in &params.alphas {
        let cells: Vec<_> = report.cells.iter().filter(|c| c.alpha == alpha).collect();
        let worst = cells.iter().map(|c| c.renormalized).fold(f64::INFINITY, f64::min);
        let worst_raw = cells.iter().map(|c| c.raw).fold(f64::INFINITY, f64::min);
        checks.push(Check::at_least(
            format!("alpha {alpha}: min satisfaction, {} geometries", cells.len()),
            worst,
            cells[0].threshold,
        ));
        checks.push(Check::at_least(
            format!("alpha {alpha}: same, normals not renormalized"),
            worst_raw,
            cells[0].threshold,
        ));
    }
    let margin = report.cells.iter().map(|c| c.boundary_margin.abs()).fold(0.0, f64::max);
    checks.push(Check::at_most("controls on surrogate boundary (|margin|)", margin, 1e-9));
    Ok(SuiteReport { suite: "chance", checks })
}

/// Random configuration within joint limits, base inside the unit square
/// offset by 0.25.
pub fn random_configuration(model: &RobotModel<f64>, rng: &mut impl Rng) -> Configuration<f64> {
    let arm = DVector::from_iterator(
        model.n_arm(),
        model.joints.iter().map(|j| rng.random_range(j.lower..=j.upper)),
    );
    Configuration::new(
        rng.random_range(0.25..1.25),
        rng.random_range(0.25..1.25),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        arm,
    )
}

/// Worst relative errors of the task, attachment-point and point-to-line
/// distance Jacobians against central differences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JacobianErrors {
    pub task: f64,
    pub point: f64,
    pub line_distance: f64,
}

pub fn jacobian_errors(configs: usize, seed: u64) -> Result<JacobianErrors> {
    const H: f64 = 1e-6;
    let model = default_robot::<f64>();
    let mut rng = seeds::derived_rng(seed, &[seeds::stream::GEOMETRY]);
    let mut out = JacobianErrors::default();
    for _ in 0..configs {
        let q = random_configuration(&model, &mut rng);
        let x0 = q.to_vector();

        let fk = |v: &DVector<f64>| {
            let t = model.forward_kinematics(&Configuration::from_vector(v)).expect("valid configuration");
            DVector::from_column_slice(t.stacked().as_slice())
        };
        let analytic = model.task_jacobian(&q)?;
        let numeric = oracle::central_difference(fk, &x0, H);
        out.task = out.task.max(oracle::relative_error(&analytic.resize_generic(nalgebra::Dyn(6), nalgebra::Dyn(x0.len()), 0.0), &numeric));

        for att in &model.attachments {
            let name = att.name.clone();
            let pos = |v: &DVector<f64>| {
                let (p, _) = model
                    .point_jacobian(&Configuration::from_vector(v), &name)
                    .expect("known attachment");
                DVector::from_column_slice(p.as_slice())
            };
            let (p, jac) = model.point_jacobian(&q, &name)?;
            let numeric = oracle::central_difference(pos, &x0, H);
            out.point = out.point.max(oracle::relative_error(&jac.clone().resize_generic(nalgebra::Dyn(3), nalgebra::Dyn(x0.len()), 0.0), &numeric));

            // A line passing 0.2–0.6 m from the attachment.
            let dir: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let off: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let line = Line::new(Vector3::zeros(), dir, 0.05);
            let radial = line.radial(&off).normalize() * rng.random_range(0.2..0.6);
            let line = Line::new(p - radial, dir, 0.05);
            let row = point_line_vfi_row(&p, &jac, &line, 0.0, 1.0)?;
            let dist = |v: &DVector<f64>| {
                DVector::from_element(1, point_line_distance(&Vector3::from_column_slice(pos(v).as_slice()), &line))
            };
            let numeric = oracle::central_difference(dist, &x0, H);
            let analytic = DMatrix::from_row_slice(1, x0.len(), (-&row.coeffs).as_slice());
            out.line_distance = out.line_distance.max(oracle::relative_error(&analytic, &numeric));
        }
    }
    Ok(out)
}

pub fn jacobian_suite(configs: usize, seed: u64) -> Result<SuiteReport> {
    let e = jacobian_errors(configs, seed)?;
    Ok(SuiteReport {
        suite: "jacobians",
        checks: vec![
            Check::at_most(format!("task jacobian, {configs} configurations"), e.task, 1e-5),
            Check::at_most(format!("attachment jacobians, {configs} configurations"), e.point, 1e-5),
            Check::at_most(format!("point-line distance, {configs} configurations"), e.line_distance, 1e-5),
        ],
    })
}

/// Random strictly convex QP with a known feasible point: up to 20
/// variables, 30 inequality rows, 3 equalities and optional bounds.
pub fn random_feasible_qp(rng: &mut impl Rng) -> QProblem<f64> {
    let n = rng.random_range(2..=20);
    let gauss = |rng: &mut _| -> f64 { StandardNormal.sample(rng) };
    let m = DMatrix::from_fn(n, n, |_, _| gauss(rng));
    let hessian = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    let gradient = DVector::from_fn(n, |_, _| 3.0 * gauss(rng));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));

    let mi = rng.random_range(0..=30);
    let a = DMatrix::from_fn(mi, n, |_, _| gauss(rng));
    let b = &a * &x0 + DVector::from_fn(mi, |_, _| rng.random_range(0.0..0.5));
    let me = rng.random_range(0..=3.min(n - 1));
    let e = DMatrix::from_fn(me, n, |_, _| gauss(rng));
    let f = &e * &x0;
    let mut p = QProblem::new(hessian, gradient)
        .with_inequalities(a, b)
        .with_equalities(e, f);
    if rng.random_bool(0.7) {
        let lower = DVector::from_fn(n, |i, _| {
            if rng.random_bool(0.6) {
                x0[i] - rng.random_range(0.1..1.0)
            } else {
                f64::NEG_INFINITY
            }
        });
        let upper = DVector::from_fn(n, |i, _| {
            if rng.random_bool(0.6) {
                x0[i] + rng.random_range(0.1..1.0)
            } else {
                f64::INFINITY
            }
        });
        p = p.with_bounds(Some(lower), Some(upper));
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QpErrors {
    pub max_kkt: f64,
    pub max_objective_rel: f64,
    pub non_optimal: usize,
}

pub fn qp_errors(problems: usize, seed: u64) -> Result<QpErrors> {
    let mut rng = seeds::derived_rng(seed, &[seeds::stream::GEOMETRY]);
    let mut out = QpErrors::default();
    for _ in 0..problems {
        let p = random_feasible_qp(&mut rng);
        let s = crate::qpsolver::solve(&p, 1e-12, 500)?;
        if s.status != QpStatus::Optimal {
            out.non_optimal += 1;
            continue;
        }
        out.max_kkt = out.max_kkt.max(kkt_residuals(&p, &s).max());
        let r = oracle::projected_gradient_qp(&p, 1e-15, 200_000)?;
        let rel = (s.objective - r.objective).abs() / r.objective.abs().max(1.0);
        out.max_objective_rel = out.max_objective_rel.max(rel);
    }
    Ok(out)
}

pub fn qp_suite(problems: usize, seed: u64) -> Result<SuiteReport> {
    let e = qp_errors(problems, seed)?;
    Ok(SuiteReport {
        suite: "qp",
        checks: vec![
            Check::at_most(format!("non-optimal solves of {problems}"), e.non_optimal as f64, 0.0),
            Check::at_most("max KKT residual", e.max_kkt, 1e-8),
            Check::at_most("objective vs projected-gradient reference", e.max_objective_rel, 1e-6),
        ],
    })
}

/// A 20³ grid with random occupancy evidence and coverage marks, and a
/// random viewpoint inside it.
pub fn random_ig_scenario(seed: u64) -> Result<(VoxelGrid, Viewpoint)> {
    let mut rng = seeds::derived_rng(seed, &[seeds::stream::GEOMETRY]);
    let mut grid = VoxelGrid::cube(1.0, 0.05, OccupancyParams::default())?;
    let occupied = rng.random_range(0.02..0.15);
    let observed = rng.random_range(0.1..0.6);
    let mut covered = Vec::new();
    for v in grid.indices().collect::<Vec<_>>() {
        let u: f64 = rng.random();
        if u < occupied {
            grid.update(v, rng.random_range(0.5..3.5));
            if rng.random_bool(0.4) {
                covered.push(v);
            }
        } else if u < occupied + observed {
            grid.update(v, rng.random_range(-3.0..0.5));
        }
    }
    grid.mark_covered(&covered);
    let position = Vector3::from_fn(|_, _| rng.random_range(0.01..0.99));
    let direction: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
    Ok((grid, Viewpoint::new(position, direction)))
}

/// Scenarios where the production gains differ from the oracles in any bit.
pub fn ig_mismatches(scenarios: usize, seed: u64) -> Result<(usize, usize)> {
    let depth = DepthSensorModel::default();
    let probe = ProbeSensorModel::default();
    let (mut visual, mut coverage) = (0, 0);
    for k in 0..scenarios {
        let s = seeds::derive(seed, &[k as u64]);
        let (grid, v) = random_ig_scenario(s)?;
        let ray_seed = seeds::derive(s, &[seeds::stream::VISUAL_RAYS]);
        if visual_gain(&grid, &v, &depth, ray_seed)?.to_bits()
            != oracle::visual_gain_oracle(&grid, &v, &depth, ray_seed)?.to_bits()
        {
            visual += 1;
        }
        let ray_seed = seeds::derive(s, &[seeds::stream::COVERAGE_RAYS]);
        if coverage_gain(&grid, &v, &probe, ray_seed)?.to_bits()
            != oracle::coverage_gain_oracle(&grid, &v, &probe, ray_seed)?.to_bits()
        {
            coverage += 1;
        }
    }
    Ok((visual, coverage))
}

pub fn ig_oracle_suite(scenarios: usize, seed: u64) -> Result<SuiteReport> {
    let (visual, coverage) = ig_mismatches(scenarios, seed)?;
    Ok(SuiteReport {
        suite: "ig-oracle",
        checks: vec![
            Check::at_most(format!("visual gain mismatches of {scenarios}"), visual as f64, 0.0),
            Check::at_most(format!("coverage gain mismatches of {scenarios}"), coverage as f64, 0.0),
        ],
    })
}

/// Largest `|Φ⁻¹(α) − reference|` over `α = k/(points+1)`.
pub fn quantile_error(points: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 1..=points {
        let a = k as f64 / (points + 1) as f64;
        worst = worst.max((std_normal_quantile(a)? - oracle::bisection_quantile(a)?).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayTrace {
    pub kappa: f64,
    pub dt: f64,
    /// Task error norm before each tick.
    pub error_norms: Vec<f64>,
    /// `-sin φ ẋ + cos φ ẏ` of each command.
    pub lateral: Vec<f64>,
}

impl DecayTrace {
    /// Largest `‖x̃(t)‖ / (‖x̃(0)‖ e^{-κt})` over the trace.
    pub fn worst_ratio(&self) -> f64 {
        let e0 = self.error_norms[0];
        self.error_norms
            .iter()
            .enumerate()
            .map(|(k, e)| e / (e0 * (-self.kappa * k as f64 * self.dt).exp()))
            .fold(0.0, f64::max)
    }

    pub fn max_lateral(&self) -> f64 {
        self.lateral.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Closed loop with no obstacles: the set point is offset from the start pose
/// by `offset` in position and the tool axis is tilted by `tilt` radians.
pub fn free_space_decay(
    params: &ControllerParams<f64>,
    offset: Vector3<f64>,
    tilt: f64,
    rate_hz: f64,
    duration: f64,
) -> Result<DecayTrace> {
    let model = default_robot::<f64>();
    let mut params = params.clone();
    params.workspace = None;
    let mut controller = Controller::new(model.clone(), params.clone())?;
    let mut q = Configuration::new(0.75, 0.75, 0.0, DVector::from_vec(vec![0.0, 0.4, -0.6, 0.0, 0.5, 0.0]));
    let x0 = model.forward_kinematics(&q)?;
    let axis = x0.direction.cross(&Vector3::z());
    let axis = if axis.norm() > 1e-9 { axis.normalize() } else { Vector3::x() };
    let direction = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), tilt) * x0.direction;
    let target = TaskVector::new(x0.position + offset, direction);
    let dt = 1.0 / rate_hz;
    let ticks = (duration * rate_hz).round() as usize;
    let mut trace = DecayTrace {
        kappa: params.kappa,
        dt,
        error_norms: Vec::with_capacity(ticks + 1),
        lateral: Vec::with_capacity(ticks),
    };
    for _ in 0..ticks {
        let tick = controller.control_step(&q, &target, &[], &[])?;
        trace.error_norms.push(tick.error_norm);
        let (w, _) = nonholonomic_row(&q);
        trace.lateral.push(w.dot(&tick.u));
        q = crate::sim::step(&model, &q, &tick.u, dt).q;
    }
    let last = crate::controller::task_error(&model.forward_kinematics(&q)?, &target).norm();
    trace.error_norms.push(last);
    Ok(trace)
}
