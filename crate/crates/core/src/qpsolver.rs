//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves
//!
//! ```text
//! minimize    ½ uᵀ H u + gᵀ u
//! subject to  A_e u  = b_e
//!             A_i u <= b_i
//!             lower <= u <= upper
//! ```
//!
//! `H` is regularized with `1e-9 I` so positive semidefinite inputs become
//! strictly convex. The dual method starts from the unconstrained minimum and
//! adds violated constraints one at a time, so no feasible starting point is
//! needed and infeasibility is detected as an unbounded dual step.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QProblem<T: Real = f64> {
    pub hessian: DMatrix<T>,
    pub gradient: DVector<T>,
    pub eq_matrix: DMatrix<T>,
    pub eq_rhs: DVector<T>,
    pub ineq_matrix: DMatrix<T>,
    pub ineq_rhs: DVector<T>,
    pub lower: Option<DVector<T>>,
    pub upper: Option<DVector<T>>,
}

impl<T: Real> QProblem<T> {
    /// Unconstrained problem.
    pub fn new(hessian: DMatrix<T>, gradient: DVector<T>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            lower: None,
            upper: None,
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<T>, b: DVector<T>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<T>, b: DVector<T>) -> Self {
        self.ineq_matrix = a;
        self.ineq_rhs = b;
        self
    }

    pub fn with_bounds(mut self, lower: Option<DVector<T>>, upper: Option<DVector<T>>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let bad = |what: &str| Error::InvalidParameter(format!("QP {what} has wrong shape"));
        if self.hessian.shape() != (n, n) {
            return Err(bad("hessian"));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(bad("equality block"));
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(bad("inequality block"));
        }
        if self.lower.as_ref().is_some_and(|l| l.len() != n)
            || self.upper.as_ref().is_some_and(|u| u.len() != n)
        {
            return Err(bad("bounds"));
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax().as_f64();
        if asym > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "QP hessian not symmetric (asymmetry {asym:e})"
            )));
        }
        Ok(())
    }

    pub fn objective(&self, u: &DVector<T>) -> T {
        (&self.hessian * u).dot(u) * T::lit(0.5) + self.gradient.dot(u)
    }

    /// Every inequality in `c·u ≥ e` form: rows, then lower bounds, then upper bounds.
    fn ge_constraints(&self) -> Vec<(DVector<T>, T)> {
        let n = self.dim();
        let mut out = Vec::new();
        for i in 0..self.ineq_matrix.nrows() {
            out.push((-self.ineq_matrix.row(i).transpose(), -self.ineq_rhs[i]));
        }
        if let Some(l) = &self.lower {
            for j in 0..n {
                if l[j].as_f64().is_finite() {
                    let mut c = DVector::zeros(n);
                    c[j] = T::one();
                    out.push((c, l[j]));
                }
            }
        }
        if let Some(u) = &self.upper {
            for j in 0..n {
                if u[j].as_f64().is_finite() {
                    let mut c = DVector::zeros(n);
                    c[j] = -T::one();
                    out.push((c, -u[j]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIter => "max-iter",
        }
    }
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T: Real = f64> {
    pub x: DVector<T>,
    pub status: QpStatus,
    /// Multipliers of the equality rows (sign convention `H u + g + A_eᵀ ν + A_iᵀ λ = 0`).
    pub eq_multipliers: DVector<T>,
    /// Multipliers (≥ 0) of the inequality rows.
    pub ineq_multipliers: DVector<T>,
    /// Multipliers (≥ 0) of the lower and upper bounds, zero where absent.
    pub lower_multipliers: DVector<T>,
    pub upper_multipliers: DVector<T>,
    pub objective: T,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual)
    }
}

/// KKT residuals of a candidate primal/dual pair, measured against the
/// unregularized problem.
pub fn kkt_residuals<T: Real>(p: &QProblem<T>, s: &QpSolution<T>) -> KktResiduals {
    let n = p.dim();
    let x = &s.x;
    let mut grad = &p.hessian * x + &p.gradient;
    grad += p.eq_matrix.transpose() * &s.eq_multipliers;
    grad += p.ineq_matrix.transpose() * &s.ineq_multipliers;
    grad += &s.upper_multipliers - &s.lower_multipliers;
    let stationarity = grad.amax().as_f64();

    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let mut dual = 0.0f64;
    if !p.eq_rhs.is_empty() {
        primal = primal.max((&p.eq_matrix * x - &p.eq_rhs).amax().as_f64());
    }
    let slack_i = &p.ineq_rhs - &p.ineq_matrix * x;
    for i in 0..slack_i.len() {
        let lam = s.ineq_multipliers[i].as_f64();
        primal = primal.max(-slack_i[i].as_f64());
        comp = comp.max((lam * slack_i[i].as_f64()).abs());
        dual = dual.max(-lam);
    }
    for j in 0..n {
        if let Some(l) = p.lower.as_ref().filter(|l| l[j].as_f64().is_finite()) {
            let sl = (x[j] - l[j]).as_f64();
            primal = primal.max(-sl);
            comp = comp.max((s.lower_multipliers[j].as_f64() * sl).abs());
        }
        if let Some(u) = p.upper.as_ref().filter(|u| u[j].as_f64().is_finite()) {
            let su = (u[j] - x[j]).as_f64();
            primal = primal.max(-su);
            comp = comp.max((s.upper_multipliers[j].as_f64() * su).abs());
        }
        dual = dual
            .max(-s.lower_multipliers[j].as_f64())
            .max(-s.upper_multipliers[j].as_f64());
    }
    KktResiduals {
        stationarity,
        primal,
        complementarity: comp,
        dual,
    }
}

/// Active-set solver carrying the previous solution's active set as a warm
/// start. One instance per control loop; not shareable across threads while
/// solving.
#[derive(Debug, Clone, Default)]
pub struct ActiveSetSolver {
    previous_active: Vec<usize>,
}

/// Plane rotation zeroing `b` in `(a, b)`.
fn givens<T: Real>(a: T, b: T) -> (T, T, T) {
    let h = a.hypot(b);
    if h == T::zero() {
        (T::one(), T::zero(), T::zero())
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns<T: Real>(m: &mut DMatrix<T>, i: usize, j: usize, c: T, s: T) {
    for r in 0..m.nrows() {
        let (a, b) = (m[(r, i)], m[(r, j)]);
        m[(r, i)] = c * a + s * b;
        m[(r, j)] = -s * a + c * b;
    }
}

struct State<T: Real> {
    /// `L⁻ᵀ Q`; the first `q` columns span the active normals.
    jmat: DMatrix<T>,
    /// Upper-triangular factor, top-left `q × q` block in use.
    rmat: DMatrix<T>,
    /// Constraint ids of the active set, in factor order.
    active: Vec<usize>,
    mult: Vec<T>,
}

impl<T: Real> State<T> {
    fn q(&self) -> usize {
        self.active.len()
    }

    /// Solves `R r = d₁`.
    fn back_solve(&self, d: &DVector<T>) -> Vec<T> {
        let q = self.q();
        let mut r = vec![T::zero(); q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.rmat[(i, k)] * r[k];
            }
            r[i] = acc / self.rmat[(i, i)];
        }
        r
    }

    fn add(&mut self, id: usize, mut d: DVector<T>, mult: T) {
        let n = d.len();
        let q = self.q();
        for j in (q + 1..n).rev() {
            if d[j] == T::zero() {
                continue;
            }
            let (c, s, h) = givens(d[j - 1], d[j]);
            d[j - 1] = h;
            d[j] = T::zero();
            rotate_columns(&mut self.jmat, j - 1, j, c, s);
        }
        for i in 0..=q {
            self.rmat[(i, q)] = d[i];
        }
        self.active.push(id);
        self.mult.push(mult);
    }

    fn drop(&mut self, k: usize) {
        let q = self.q();
        for col in k..q - 1 {
            for row in 0..=col + 1 {
                self.rmat[(row, col)] = self.rmat[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.rmat[(row, q - 1)] = T::zero();
        }
        for i in k..q - 1 {
            let (c, s, h) = givens(self.rmat[(i, i)], self.rmat[(i + 1, i)]);
            self.rmat[(i, i)] = h;
            self.rmat[(i + 1, i)] = T::zero();
            for col in i + 1..q - 1 {
                let (a, b) = (self.rmat[(i, col)], self.rmat[(i + 1, col)]);
                self.rmat[(i, col)] = c * a + s * b;
                self.rmat[(i + 1, col)] = -s * a + c * b;
            }
            rotate_columns(&mut self.jmat, i, i + 1, c, s);
        }
        self.active.remove(k);
        self.mult.remove(k);
    }
}

impl ActiveSetSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forgets the warm-start set.
    pub fn reset(&mut self) {
        self.previous_active.clear();
    }

    pub fn solve<T: Real>(
        &mut self,
        p: &QProblem<T>,
        tol: T,
        max_iter: usize,
    ) -> Result<QpSolution<T>> {
        p.validate()?;
        let n = p.dim();
        let n_eq = p.eq_rhs.len();
        let ge = p.ge_constraints();
        let n_in = ge.len();

        let mut h = p.hessian.clone();
        for i in 0..n {
            h[(i, i)] += T::lit(REGULARIZATION);
        }
        let chol = Cholesky::new(h).ok_or_else(|| {
            Error::InvalidParameter("QP hessian is not positive semidefinite".into())
        })?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("cholesky factor is nonsingular");
        let mut st = State {
            jmat: l_inv.transpose(),
            rmat: DMatrix::zeros(n, n),
            active: Vec::new(),
            mult: Vec::new(),
        };
        let mut x = -chol.solve(&p.gradient);

        // ids < n_eq are equalities (stored with the sign used when added),
        // ids >= n_eq index `ge`.
        let mut eq_sign = vec![T::one(); n_eq];
        let normal = |id: usize, eq_sign: &[T]| -> (DVector<T>, T) {
            if id < n_eq {
                (
                    p.eq_matrix.row(id).transpose() * eq_sign[id],
                    p.eq_rhs[id] * eq_sign[id],
                )
            } else {
                ge[id - n_eq].clone()
            }
        };
        let feas_tol = (tol * T::lit(1e-2)).max(T::lit(1e-13));
        let zero_tol = T::lit(1e-14);
        let mut iterations = 0usize;
        let mut status = QpStatus::Optimal;

        let warm: Vec<usize> = self
            .previous_active
            .iter()
            .copied()
            .filter(|&i| i < n_in)
            .collect();
        let mut next_eq = 0usize;

        'outer: loop {
            // choose the constraint to add
            let pick = if next_eq < n_eq {
                let id = next_eq;
                next_eq += 1;
                let row = p.eq_matrix.row(id).transpose();
                let s = row.dot(&x) - p.eq_rhs[id];
                eq_sign[id] = if s > T::zero() { -T::one() } else { T::one() };
                Some(id)
            } else {
                let violation = |k: usize| {
                    let (c, e) = &ge[k];
                    (c.dot(&x) - *e) / c.norm().max(T::lit(1e-300))
                };
                let inactive = |k: &usize| !st.active.contains(&(n_eq + *k));
                let most = |it: &mut dyn Iterator<Item = usize>| {
                    it.filter(inactive)
                        .map(|k| (k, violation(k)))
                        .filter(|(_, v)| *v < -feas_tol)
                        .fold(None, |best: Option<(usize, T)>, (k, v)| match best {
                            Some((_, bv)) if bv <= v => best,
                            _ => Some((k, v)),
                        })
                };
                most(&mut warm.iter().copied())
                    .or_else(|| most(&mut (0..n_in)))
                    .map(|(k, _)| n_eq + k)
            };
            let Some(id) = pick else { break };
            let (np, ep) = normal(id, &eq_sign);
            let is_eq = id < n_eq;
            let mut added_mult = T::zero();
            loop {
                iterations += 1;
                if iterations > max_iter {
                    status = QpStatus::MaxIter;
                    break 'outer;
                }
                let s = np.dot(&x) - ep;
                let d = st.jmat.transpose() * &np;
                let q = st.q();
                let d2_sq = d.rows(q, n - q).norm_squared();
                let r = st.back_solve(&d);
                // partial (dual) step limit over droppable constraints
                let mut t1: Option<(T, usize)> = None;
                for (k, &rk) in r.iter().enumerate() {
                    if st.active[k] < n_eq || rk <= zero_tol {
                        continue;
                    }
                    let cand = st.mult[k] / rk;
                    if t1.is_none_or(|(t, _)| cand < t) {
                        t1 = Some((cand, k));
                    }
                }
                let full = d2_sq > zero_tol * (T::one() + d.norm_squared());
                if !full && is_eq && s.abs() <= feas_tol {
                    // linearly dependent, already satisfied equality
                    continue 'outer;
                }
                let t2 = if full { Some(-s / d2_sq) } else { None };
                let step = match (t1, t2) {
                    (None, None) => {
                        status = QpStatus::Infeasible;
                        break 'outer;
                    }
                    (Some((a, k)), Some(b)) if a < b => (a, Some(k)),
                    (Some((a, k)), None) => (a, Some(k)),
                    (_, Some(b)) => (b, None),
                };
                let (t, drop_k) = step;
                if full {
                    let z = st.jmat.columns(q, n - q) * d.rows(q, n - q);
                    x += z * t;
                }
                for (m, rk) in st.mult.iter_mut().zip(&r) {
                    *m -= t * *rk;
                }
                added_mult += t;
                match drop_k {
                    None => {
                        st.add(id, d, added_mult);
                        break;
                    }
                    Some(k) => st.drop(k),
                }
            }
        }

        if status == QpStatus::Optimal {
            polish(p, &ge, n_eq, &st.active, &mut st.mult, &mut x, |id| normal(id, &eq_sign), feas_tol);
        }

        self.previous_active = st
            .active
            .iter()
            .filter(|&&id| id >= n_eq)
            .map(|&id| id - n_eq)
            .collect();

        // map multipliers back to the caller's sign conventions
        let mut eq_mult = DVector::zeros(n_eq);
        let mut ineq_mult = DVector::zeros(p.ineq_rhs.len());
        let mut lower_mult = DVector::zeros(n);
        let mut upper_mult = DVector::zeros(n);
        let lower_ids: Vec<usize> = p
            .lower
            .as_ref()
            .map(|l| (0..n).filter(|&j| l[j].as_f64().is_finite()).collect())
            .unwrap_or_default();
        let upper_ids: Vec<usize> = p
            .upper
            .as_ref()
            .map(|u| (0..n).filter(|&j| u[j].as_f64().is_finite()).collect())
            .unwrap_or_default();
        let m_rows = p.ineq_rhs.len();
        for (&id, &m) in st.active.iter().zip(&st.mult) {
            if id < n_eq {
                eq_mult[id] = -m * eq_sign[id];
            } else {
                let k = id - n_eq;
                if k < m_rows {
                    ineq_mult[k] = m;
                } else if k < m_rows + lower_ids.len() {
                    lower_mult[lower_ids[k - m_rows]] = m;
                } else {
                    upper_mult[upper_ids[k - m_rows - lower_ids.len()]] = m;
                }
            }
        }
        let objective = p.objective(&x);
        Ok(QpSolution {
            x,
            status,
            eq_multipliers: eq_mult,
            ineq_multipliers: ineq_mult,
            lower_multipliers: lower_mult,
            upper_multipliers: upper_mult,
            objective,
            iterations,
        })
    }
}

/// Re-solves the KKT system of the final active set with the unregularized
/// Hessian, removing the `1e-9 u` stationarity error. Kept only if the
/// multipliers stay non-negative and every constraint still holds.
#[allow(clippy::too_many_arguments)]
fn polish<T: Real>(
    p: &QProblem<T>,
    ge: &[(DVector<T>, T)],
    n_eq: usize,
    active: &[usize],
    mult: &mut [T],
    x: &mut DVector<T>,
    normal: impl Fn(usize) -> (DVector<T>, T),
    feas_tol: T,
) {
    let n = p.dim();
    let q = active.len();
    let mut kkt = DMatrix::zeros(n + q, n + q);
    let mut rhs = DVector::zeros(n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
    rhs.rows_mut(0, n).copy_from(&(-&p.gradient));
    for (k, &id) in active.iter().enumerate() {
        let (c, e) = normal(id);
        kkt.view_mut((0, n + k), (n, 1)).copy_from(&(-&c));
        kkt.view_mut((n + k, 0), (1, n)).copy_from(&c.transpose());
        rhs[n + k] = e;
    }
    let Some(sol) = kkt.lu().solve(&rhs) else { return };
    if sol.iter().any(|v| !v.as_f64().is_finite()) {
        return;
    }
    let cand = sol.rows(0, n).into_owned();
    let lam = sol.rows(n, q);
    let signs_ok = active
        .iter()
        .zip(lam.iter())
        .all(|(&id, &m)| id < n_eq || m >= T::zero());
    let feasible = ge.iter().all(|(c, e)| c.dot(&cand) - *e >= -feas_tol)
        && (0..p.eq_rhs.len()).all(|i| (p.eq_matrix.row(i).transpose().dot(&cand) - p.eq_rhs[i]).abs() <= feas_tol);
    // Only a small correction is expected; a large jump means a singular system.
    let close = (&cand - &*x).amax() <= T::lit(1e-6) * (T::one() + x.amax());
    if signs_ok && feasible && close {
        *x = cand;
        for (m, &l) in mult.iter_mut().zip(lam.iter()) {
            *m = l;
        }
    }
}

/// Cold-start solve.
pub fn solve<T: Real>(p: &QProblem<T>, tol: T, max_iter: usize) -> Result<QpSolution<T>> {
    ActiveSetSolver::new().solve(p, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unconstrained_quadratic() {
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = QProblem::new(DMatrix::identity(3, 3) * 2.0, -&a * 2.0);
        let s = solve(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, a, epsilon = 1e-8);
    }

    #[test]
    fn active_lower_bounds() {
        let a = DVector::from_vec(vec![0.0, -1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 3.0]);
        let p = QProblem::new(DMatrix::identity(3, 3) * 2.0, -&a * 2.0).with_bounds(Some(b.clone()), None);
        let s = solve(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, b, epsilon = 1e-8);
        assert!(kkt_residuals(&p, &s).max() < 1e-8);
    }

    #[test]
    fn equality_and_inequality() {
        // min x² + y²  s.t. x + y = 1, x ≤ 0.2
        let p = QProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![1.0]))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![0.2]));
        let s = solve(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, DVector::from_vec(vec![0.2, 0.8]), epsilon = 1e-9);
        let k = kkt_residuals(&p, &s);
        assert!(k.max() < 1e-8, "{k:?}");
        assert!(s.ineq_multipliers[0] > 0.0);
    }

    #[test]
    fn infeasible_detected() {
        let p = QProblem::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![-1.0, -1.0]));
        let s = solve(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        let eq = QProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
                DVector::from_vec(vec![1.0, 2.0]),
            );
        assert_eq!(solve(&eq, 1e-8, 200).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn redundant_equality_is_skipped() {
        let p = QProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2)).with_equalities(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        );
        let s = solve(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, DVector::from_vec(vec![0.5, 0.5]), epsilon = 1e-9);
    }

    #[test]
    fn max_iter_reported() {
        let p = QProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![-5.0, -5.0]))
            .with_bounds(None, Some(DVector::from_vec(vec![1.0, 1.0])));
        assert_eq!(solve(&p, 1e-8, 1).unwrap().status, QpStatus::MaxIter);
    }

    #[test]
    fn rejects_bad_shapes_and_asymmetry() {
        let p = QProblem::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
        assert!(solve(&p, 1e-8, 10).is_err());
        let p = QProblem::new(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(solve(&p, 1e-8, 10).is_err());
    }

    #[test]
    fn planted_solutions_and_warm_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut warm = ActiveSetSolver::new();
        for _ in 0..200 {
            let n = rng.random_range(2..12);
            let m = rng.random_range(1..16);
            let mf = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = mf.transpose() * &mf + DMatrix::identity(n, n) * 0.1;
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let x_star = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let mut b = &a * &x_star;
            let mut lam = DVector::zeros(m);
            for i in 0..m.min(n) {
                if rng.random_bool(0.5) {
                    lam[i] = rng.random_range(0.1..2.0);
                } else {
                    b[i] += rng.random_range(0.1..1.0);
                }
            }
            for i in n..m {
                b[i] += rng.random_range(0.1..1.0);
            }
            let g = -(&h * &x_star) - a.transpose() * &lam;
            let p = QProblem::new(h, g).with_inequalities(a, b);
            let cold = solve(&p, 1e-8, 500).unwrap();
            assert_eq!(cold.status, QpStatus::Optimal);
            assert!((&cold.x - &x_star).amax() < 1e-6);
            assert!(kkt_residuals(&p, &cold).max() < 1e-8);
            let hot = warm.solve(&p, 1e-8, 500).unwrap();
            assert!((&hot.x - &cold.x).amax() < 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let p = QProblem::new(DMatrix::identity(3, 3), DVector::from_vec(vec![-1.0, 2.0, -3.0]))
            .with_inequalities(DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]), DVector::from_vec(vec![0.5]));
        let a = solve(&p, 1e-8, 100).unwrap();
        let b = solve(&p, 1e-8, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_precision() {
        let p: QProblem<f32> = QProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-2.0, -4.0]))
            .with_bounds(None, Some(DVector::from_vec(vec![0.5, 10.0])));
        let s = solve(&p, 1e-5, 50).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-5 && (s.x[1] - 2.0).abs() < 1e-4);
    }
}
