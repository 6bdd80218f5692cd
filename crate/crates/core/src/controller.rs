//! Whole-body velocity controller: one constrained QP per tick.
//!
//! The decision vector is `[q̇; s]`. Slack variables relax the joint-velocity
//! limits (one slack shared by the `±` pair of each coordinate) and the
//! point-to-line rows (one slack per row).

use nalgebra::{DMatrix, DVector, Matrix6xX, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::kinematics::{nonholonomic_row, Configuration, RobotModel, TaskVector, BASE_CENTER, ELBOW, PROBE};
use crate::primitives::{point_line_vfi_row, point_plane_vfi_row, Line, Plane};
use crate::qpsolver::{ActiveSetSolver, QProblem, QpStatus};
use crate::scalar::Real;
use crate::svfi::{surrogate_row, ChanceParams, PlaneBelief};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKind {
    Hard,
    Slack,
    Equality,
    Chance,
}

impl RowKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowKind::Hard => "hard",
            RowKind::Slack => "slack",
            RowKind::Equality => "equality",
            RowKind::Chance => "chance",
        }
    }
}

/// One linear row `coeffs · q̇ ≤ bound` (or `=` for equalities).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow<T: Real = f64> {
    pub coeffs: DVector<T>,
    pub bound: T,
    pub kind: RowKind,
    pub label: String,
    /// Slack column (relative to the slack block) relaxing this row.
    pub slack: Option<usize>,
    /// Geometric distance the row was built from, if any.
    pub distance: Option<T>,
    /// Probabilistic buffer subtracted from the bound (chance rows).
    pub buffer: Option<T>,
}

impl<T: Real> ConstraintRow<T> {
    pub fn new(coeffs: DVector<T>, bound: T, kind: RowKind) -> Self {
        Self {
            coeffs,
            bound,
            kind,
            label: String::new(),
            slack: None,
            distance: None,
            buffer: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_distance(mut self, d: T) -> Self {
        self.distance = Some(d);
        self
    }

    pub fn with_buffer(mut self, b: T) -> Self {
        self.buffer = Some(b);
        self
    }

    pub fn with_slack(mut self, index: usize) -> Self {
        self.slack = Some(index);
        self
    }

    /// `bound - coeffs · u`; non-negative when the row holds without slack.
    pub fn margin(&self, u: &DVector<T>) -> T {
        self.bound - self.coeffs.dot(u)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.coeffs.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.coeffs.len(),
            });
        }
        if (self.kind == RowKind::Slack) != self.slack.is_some() {
            return Err(Error::InvalidParameter(format!(
                "row '{}' has a slack index iff it is a slack row",
                self.label
            )));
        }
        Ok(())
    }
}

/// Axis-aligned box bounding the workspace (the cube).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceBox<T: Real = f64> {
    pub min: Vector3<T>,
    pub max: Vector3<T>,
}

impl<T: Real> WorkspaceBox<T> {
    pub fn cube(side: T) -> Self {
        Self {
            min: Vector3::zeros(),
            max: Vector3::repeat(side),
        }
    }

    /// Inward-facing planes: -x, +x, -y, +y, floor, ceiling.
    pub fn planes(&self) -> [Plane<T>; 6] {
        let e = |i: usize| Vector3::ith(i, T::one());
        [
            Plane::through(e(0), &self.min),
            Plane::through(-e(0), &self.max),
            Plane::through(e(1), &self.min),
            Plane::through(-e(1), &self.max),
            Plane::through(e(2), &self.min),
            Plane::through(-e(2), &self.max),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams<T: Real = f64> {
    pub kappa: T,
    pub lambda_c: T,
    pub lambda_s: T,
    pub eta: T,
    pub alpha: T,
    pub d_safe_base: T,
    pub d_safe_probe: T,
    /// Clearance added to a pipe radius for point-to-line rows.
    pub line_clearance: T,
    pub workspace: Option<WorkspaceBox<T>>,
    /// Hard distance the base center keeps from the workspace side walls.
    pub workspace_margin: T,
    /// Velocity-damper gain for joint position limits; `None` disables them.
    pub joint_limit_gain: Option<T>,
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for ControllerParams<T> {
    fn default() -> Self {
        let l = T::lit;
        Self {
            kappa: l(6.0),
            lambda_c: l(1.2),
            lambda_s: l(5e3),
            eta: l(1.0),
            alpha: l(0.7),
            d_safe_base: l(0.5),
            d_safe_probe: l(0.1),
            line_clearance: l(0.075),
            workspace: Some(WorkspaceBox::cube(l(1.5))),
            workspace_margin: l(0.3),
            joint_limit_gain: Some(l(1.0)),
            tol: l(1e-8),
            max_iter: 200,
        }
    }
}

impl<T: Real> ControllerParams<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T, name: &str| {
            if v.as_f64() > 0.0 && v.as_f64().is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive")))
            }
        };
        pos(self.kappa, "kappa")?;
        pos(self.lambda_c, "lambda_c")?;
        pos(self.lambda_s, "lambda_s")?;
        pos(self.tol, "tol")?;
        for (v, name) in [
            (self.eta, "eta"),
            (self.d_safe_base, "d_safe_base"),
            (self.d_safe_probe, "d_safe_probe"),
            (self.line_clearance, "line_clearance"),
            (self.workspace_margin, "workspace_margin"),
        ] {
            if !(v.as_f64() >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        self.chance(self.d_safe_base).validate()
    }

    fn chance(&self, d_safe: T) -> ChanceParams<T> {
        ChanceParams {
            alpha: self.alpha,
            eta: self.eta,
            d_safe,
        }
    }
}

/// Objective of the control QP over `[q̇; s]` with no constraints attached:
/// `H = 2(JᵀJ + λ_c I) ⊕ 2λ_s I`, `g = 2κJᵀx̃ ⊕ 0`.
pub fn build_objective<T: Real>(
    jac: &Matrix6xX<T>,
    x_err: &Vector6<T>,
    kappa: T,
    lambda_c: T,
    lambda_s: T,
    n_slack: usize,
) -> QProblem<T> {
    let n = jac.ncols();
    let two = T::lit(2.0);
    let mut h = DMatrix::zeros(n + n_slack, n + n_slack);
    let jtj = jac.transpose() * jac;
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = two * jtj[(i, j)];
        }
        h[(i, i)] += two * lambda_c;
    }
    for i in n..n + n_slack {
        h[(i, i)] = two * lambda_s;
    }
    let mut g = DVector::zeros(n + n_slack);
    g.rows_mut(0, n).copy_from(&(jac.transpose() * x_err * (two * kappa)));
    QProblem::new(h, g)
}

/// Number of slack columns needed by `rows`.
pub fn slack_count<T: Real>(rows: &[ConstraintRow<T>]) -> usize {
    rows.iter().filter_map(|r| r.slack).map(|s| s + 1).max().unwrap_or(0)
}

/// Attaches rows to an objective built by [`build_objective`]. Slack rows get
/// `-1` in their slack column; slack columns are bounded below by zero.
pub fn attach_constraints<T: Real>(
    mut problem: QProblem<T>,
    rows: &[ConstraintRow<T>],
    n: usize,
) -> Result<QProblem<T>> {
    let total = problem.dim();
    let n_slack = total - n;
    let eq: Vec<&ConstraintRow<T>> = rows.iter().filter(|r| r.kind == RowKind::Equality).collect();
    let ineq: Vec<&ConstraintRow<T>> = rows.iter().filter(|r| r.kind != RowKind::Equality).collect();
    let mut a_e = DMatrix::zeros(eq.len(), total);
    let mut b_e = DVector::zeros(eq.len());
    for (i, r) in eq.iter().enumerate() {
        r.validate(n)?;
        a_e.view_mut((i, 0), (1, n)).copy_from(&r.coeffs.transpose());
        b_e[i] = r.bound;
    }
    let mut a_i = DMatrix::zeros(ineq.len(), total);
    let mut b_i = DVector::zeros(ineq.len());
    for (i, r) in ineq.iter().enumerate() {
        r.validate(n)?;
        a_i.view_mut((i, 0), (1, n)).copy_from(&r.coeffs.transpose());
        if let Some(s) = r.slack {
            if s >= n_slack {
                return Err(Error::Dimension {
                    expected: n_slack,
                    got: s + 1,
                });
            }
            a_i[(i, n + s)] = -T::one();
        }
        b_i[i] = r.bound;
    }
    let mut lower = DVector::from_element(total, T::lit(f64::NEG_INFINITY));
    for i in n..total {
        lower[i] = T::zero();
    }
    problem = problem
        .with_equalities(a_e, b_e)
        .with_inequalities(a_i, b_i)
        .with_bounds(Some(lower), None);
    Ok(problem)
}

const AXIS_NAMES: [&str; 3] = ["x", "y", "phi"];

fn coordinate_name(i: usize) -> String {
    AXIS_NAMES.get(i).map_or_else(|| format!("q{}", i - 2), |s| s.to_string())
}

/// Every row of the control QP at configuration `q`.
///
/// Order: nonholonomic equality, chance rows (belief × {base, probe}),
/// workspace rows, line rows (line × {probe, elbow}), velocity-limit pairs,
/// optional joint-limit dampers. Velocity pairs use slack columns `0..n`, line
/// rows the columns after that.
pub fn collect_constraints<T: Real>(
    model: &RobotModel<T>,
    q: &Configuration<T>,
    qdot_prev: &DVector<T>,
    beliefs: &[PlaneBelief<T>],
    lines: &[Line<T>],
    params: &ControllerParams<T>,
) -> Result<Vec<ConstraintRow<T>>> {
    let n = model.dim();
    if qdot_prev.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: qdot_prev.len(),
        });
    }
    let chain = model.chain(q)?;
    let (base_pt, base_jac) = model.attachment_jacobian(q, &chain, model.attachment(BASE_CENTER)?)?;
    let (probe_pt, probe_jac) = model.attachment_jacobian(q, &chain, model.attachment(PROBE)?)?;
    let (elbow_pt, elbow_jac) = model.attachment_jacobian(q, &chain, model.attachment(ELBOW)?)?;

    let mut rows = Vec::new();
    let (w, w0) = nonholonomic_row(q);
    rows.push(ConstraintRow::new(w, w0, RowKind::Equality).with_label("nonholonomic"));

    let base_chance = params.chance(params.d_safe_base);
    let probe_chance = params.chance(params.d_safe_probe);
    for (k, belief) in beliefs.iter().enumerate() {
        belief.validate()?;
        rows.push(
            surrogate_row(belief, &base_pt, &base_jac, qdot_prev, &base_chance)?
                .with_label(format!("chance:plane{k}:base")),
        );
        rows.push(
            surrogate_row(belief, &probe_pt, &probe_jac, qdot_prev, &probe_chance)?
                .with_label(format!("chance:plane{k}:probe")),
        );
    }

    if let Some(ws) = &params.workspace {
        let planes = ws.planes();
        for (k, plane) in planes[..4].iter().enumerate() {
            rows.push(
                point_plane_vfi_row(&base_pt, &base_jac, plane, params.workspace_margin, params.eta)
                    .with_label(format!("workspace:side{k}:base")),
            );
        }
        for (k, plane) in planes[4..].iter().enumerate() {
            let name = if k == 0 { "floor" } else { "ceiling" };
            rows.push(
                point_plane_vfi_row(&probe_pt, &probe_jac, plane, params.d_safe_probe, params.eta)
                    .with_label(format!("workspace:{name}:probe")),
            );
        }
    }

    let mut next_slack = n;
    for (k, line) in lines.iter().enumerate() {
        let d_safe = line.radius + params.line_clearance;
        for (name, pt, jac) in [("probe", &probe_pt, &probe_jac), ("elbow", &elbow_pt, &elbow_jac)] {
            rows.push(
                point_line_vfi_row(pt, jac, line, d_safe, params.eta)?
                    .with_label(format!("line{k}:{name}"))
                    .with_slack(next_slack),
            );
            next_slack += 1;
        }
    }

    let limits = model.velocity_limits();
    for i in 0..n {
        let name = coordinate_name(i);
        let mut e = DVector::zeros(n);
        e[i] = T::one();
        rows.push(
            ConstraintRow::new(e.clone(), limits[i], RowKind::Slack)
                .with_label(format!("vel+:{name}"))
                .with_slack(i),
        );
        rows.push(
            ConstraintRow::new(-e, limits[i], RowKind::Slack)
                .with_label(format!("vel-:{name}"))
                .with_slack(i),
        );
    }

    if let Some(gain) = params.joint_limit_gain {
        for (k, joint) in model.joints.iter().enumerate() {
            let mut e = DVector::zeros(n);
            e[3 + k] = T::one();
            let angle = q.arm[k];
            rows.push(
                ConstraintRow::new(e.clone(), gain * (joint.upper - angle), RowKind::Hard)
                    .with_label(format!("jointlimit+:{}", joint.name))
                    .with_distance(joint.upper - angle),
            );
            rows.push(
                ConstraintRow::new(-e, gain * (angle - joint.lower), RowKind::Hard)
                    .with_label(format!("jointlimit-:{}", joint.name))
                    .with_distance(angle - joint.lower),
            );
        }
    }
    Ok(rows)
}

/// Six-dimensional task error `[t_e - t_d; n_e - n_d]`.
pub fn task_error<T: Real>(current: &TaskVector<T>, target: &TaskVector<T>) -> Vector6<T> {
    let p = current.position - target.position;
    let d = current.direction - target.direction;
    Vector6::new(p.x, p.y, p.z, d.x, d.y, d.z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowReport<T: Real = f64> {
    pub label: String,
    pub kind: RowKind,
    /// `bound - coeffs · u` (before slack).
    pub margin: T,
    pub distance: Option<T>,
    pub buffer: Option<T>,
    pub slack: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlTick<T: Real = f64> {
    /// Commanded configuration velocity (zero on emergency stop).
    pub u: DVector<T>,
    pub slacks: DVector<T>,
    pub rows: Vec<RowReport<T>>,
    pub error_norm: T,
    pub status: QpStatus,
    pub iterations: usize,
}

impl<T: Real> ControlTick<T> {
    pub fn emergency_stop(&self) -> bool {
        self.status != QpStatus::Optimal
    }

    pub fn slack_norm(&self) -> T {
        if self.slacks.is_empty() {
            T::zero()
        } else {
            self.slacks.amax()
        }
    }
}

/// Controller state carried across ticks: the previous command (for the
/// chance buffers) and the solver warm start.
#[derive(Debug, Clone)]
pub struct Controller<T: Real = f64> {
    pub model: RobotModel<T>,
    pub params: ControllerParams<T>,
    qdot_prev: DVector<T>,
    solver: ActiveSetSolver,
}

impl<T: Real> Controller<T> {
    pub fn new(model: RobotModel<T>, params: ControllerParams<T>) -> Result<Self> {
        params.validate()?;
        let n = model.dim();
        Ok(Self {
            model,
            params,
            qdot_prev: DVector::zeros(n),
            solver: ActiveSetSolver::new(),
        })
    }

    pub fn previous_command(&self) -> &DVector<T> {
        &self.qdot_prev
    }

    pub fn reset(&mut self) {
        self.qdot_prev.fill(T::zero());
        self.solver.reset();
    }

    /// Builds and solves the QP for one tick. Solver failure yields an
    /// emergency-stop tick with `u = 0`.
    pub fn control_step(
        &mut self,
        q: &Configuration<T>,
        target: &TaskVector<T>,
        beliefs: &[PlaneBelief<T>],
        lines: &[Line<T>],
    ) -> Result<ControlTick<T>> {
        let n = self.model.dim();
        let current = self.model.forward_kinematics(q)?;
        let x_err = task_error(&current, target);
        let jac = self.model.task_jacobian(q)?;
        let rows = collect_constraints(&self.model, q, &self.qdot_prev, beliefs, lines, &self.params)?;
        let n_slack = slack_count(&rows);
        let p = &self.params;
        let objective = build_objective(&jac, &x_err, p.kappa, p.lambda_c, p.lambda_s, n_slack);
        let problem = attach_constraints(objective, &rows, n)?;
        let sol = self.solver.solve(&problem, p.tol, p.max_iter)?;
        let (u, slacks) = if sol.status == QpStatus::Optimal {
            (
                sol.x.rows(0, n).into_owned(),
                sol.x.rows(n, n_slack).into_owned(),
            )
        } else {
            self.solver.reset();
            (DVector::zeros(n), DVector::zeros(n_slack))
        };
        let reports = rows
            .into_iter()
            .map(|r| RowReport {
                margin: r.margin(&u),
                label: r.label,
                kind: r.kind,
                distance: r.distance,
                buffer: r.buffer,
                slack: r.slack,
            })
            .collect();
        self.qdot_prev = u.clone();
        Ok(ControlTick {
            u,
            slacks,
            rows: reports,
            error_norm: x_err.norm(),
            status: sol.status,
            iterations: sol.iterations,
        })
    }
}
