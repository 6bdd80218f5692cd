//! Slow, independent reference implementations used by the validation suites.
//!
//! None of these share code paths with the production routines they check:
//! the quantile integrates the normal density directly, Jacobians come from
//! central differences, the QP reference runs accelerated projected gradient
//! on the dual, and ray traversal enumerates every boundary crossing up front.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::planner::Viewpoint;
use crate::qpsolver::QProblem;
use crate::sensing::{frustum_rays, sphere_rays, DepthSensorModel, ProbeSensorModel};
use crate::worldmap::{bernoulli_entropy, VoxelGrid, VoxelIndex, VoxelState};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `Φ(z)` from composite Simpson integration of the density over `[0, |z|]`.
pub fn simpson_normal_cdf(z: f64) -> f64 {
    let a = z.abs();
    if a == 0.0 {
        return 0.5;
    }
    let n = 2 * ((a / 2e-3).ceil() as usize).max(4);
    let h = a / n as f64;
    let pdf = |x: f64| INV_SQRT_2PI * (-0.5 * x * x).exp();
    let mut s = pdf(0.0) + pdf(a);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    let half = s * h / 3.0;
    if z > 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// `Φ⁻¹(α)` by bisection on [`simpson_normal_cdf`].
pub fn bisection_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Probability(alpha));
    }
    let (mut lo, mut hi) = (-9.0_f64, 9.0_f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if simpson_normal_cdf(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Central-difference Jacobian of `f` at `x`.
pub fn central_difference<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

/// `max |a - b| / max(1, max |b|)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleQpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Largest constraint violation at `x`.
    pub infeasibility: f64,
    pub iterations: usize,
}

/// Reference QP solution by FISTA with adaptive restart on the dual
///
/// ```text
/// max_{λ ≥ 0, ν}  min_u ½ uᵀ H u + gᵀ u + λᵀ(C u - c) + νᵀ(E u - e)
/// ```
///
/// where `C u ≤ c` stacks the inequality rows and finite bounds. Requires a
/// positive definite Hessian.
pub fn projected_gradient_qp(p: &QProblem<f64>, tol: f64, max_iter: usize) -> Result<OracleQpSolution> {
    p.validate()?;
    let n = p.dim();
    let chol = p
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("oracle needs a positive definite hessian".into()))?;
    let mut rows: Vec<(DVector<f64>, f64)> = (0..p.ineq_matrix.nrows())
        .map(|i| (p.ineq_matrix.row(i).transpose(), p.ineq_rhs[i]))
        .collect();
    for j in 0..n {
        let unit = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
        if let Some(l) = p.lower.as_ref().filter(|l| l[j].is_finite()) {
            rows.push((-&unit, -l[j]));
        }
        if let Some(u) = p.upper.as_ref().filter(|u| u[j].is_finite()) {
            rows.push((unit, u[j]));
        }
    }
    let (mi, me) = (rows.len(), p.eq_rhs.len());
    let mut a = DMatrix::zeros(mi + me, n);
    let mut b = DVector::zeros(mi + me);
    for (i, (r, c)) in rows.iter().enumerate() {
        a.set_row(i, &r.transpose());
        b[i] = *c;
    }
    for i in 0..me {
        a.set_row(mi + i, &p.eq_matrix.row(i));
        b[mi + i] = p.eq_rhs[i];
    }
    let primal = |y: &DVector<f64>| -chol.solve(&(&p.gradient + a.transpose() * y));
    if mi + me == 0 {
        let x = primal(&DVector::zeros(0));
        return Ok(OracleQpSolution {
            objective: p.objective(&x),
            x,
            infeasibility: 0.0,
            iterations: 0,
        });
    }
    let hinv_at = chol.solve(&a.transpose());
    let lipschitz = (&a * hinv_at).symmetric_eigenvalues().amax().max(1e-300);
    let step = 1.0 / lipschitz;
    let project = |y: &mut DVector<f64>| {
        for i in 0..mi {
            y[i] = y[i].max(0.0);
        }
    };

    let m = mi + me;
    let mut y = DVector::zeros(m);
    let mut z = y.clone();
    let mut theta = 1.0_f64;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let x = primal(&z);
        let mut next = &z + (&a * &x - &b) * step;
        project(&mut next);
        let delta = &next - &y;
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        // Restart when momentum points against the last step.
        if delta.dot(&(&next - &z)) < 0.0 {
            z = next.clone();
            theta = 1.0;
        } else {
            z = &next + &delta * ((theta - 1.0) / theta_next);
            theta = theta_next;
        }
        y = next;
        if delta.amax() <= tol * (1.0 + y.amax()) {
            break;
        }
    }
    let x = primal(&y);
    let residual = &a * &x - &b;
    let mut infeasibility = 0.0_f64;
    for i in 0..m {
        let v = if i < mi { residual[i] } else { residual[i].abs() };
        infeasibility = infeasibility.max(v);
    }
    Ok(OracleQpSolution {
        objective: p.objective(&x),
        x,
        infeasibility,
        iterations,
    })
}

/// Voxels met by the half-open segment `[o, o + length·d)`, found by listing
/// every grid-plane crossing along each axis, sorting them and stepping
/// through groups of simultaneous crossings. Returns the voxels and whether
/// the walk ended on an occupied voxel (only when `stop_at_occupied`).
pub fn enumerate_traversal(
    grid: &VoxelGrid,
    origin: &nalgebra::Vector3<f64>,
    direction: &nalgebra::Vector3<f64>,
    length: f64,
    stop_at_occupied: bool,
) -> Result<(Vec<VoxelIndex>, bool)> {
    let start = grid
        .voxel_of(origin)
        .ok_or(Error::OutsideGrid(origin.x, origin.y, origin.z))?;
    let res = grid.resolution;
    let end = length - 1e-9 * res;
    let mut events: Vec<(f64, usize)> = Vec::new();
    for axis in 0..3 {
        let d = direction[axis];
        if d == 0.0 {
            continue;
        }
        let dim = grid.dims[axis] as i64;
        let s = start[axis] as i64;
        // Boundaries ahead of the start voxel, out to the far grid face.
        let boundaries: Vec<i64> = if d > 0.0 { (s + 1..=dim).collect() } else { (0..=s).rev().collect() };
        for k in boundaries {
            let t = (grid.origin[axis] + k as f64 * res - origin[axis]) / d;
            if t < end {
                events.push((t, axis));
            }
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut idx = [start[0] as i64, start[1] as i64, start[2] as i64];
    let mut voxels = vec![start];
    if stop_at_occupied && grid.is_occupied(start) {
        return Ok((voxels, true));
    }
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            let axis = events[i].1;
            idx[axis] += if direction[axis] > 0.0 { 1 } else { -1 };
            i += 1;
        }
        if !grid.contains(idx) {
            break;
        }
        let v = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
        voxels.push(v);
        if stop_at_occupied && grid.is_occupied(v) {
            return Ok((voxels, true));
        }
    }
    Ok((voxels, false))
}

/// Visual gain evaluated voxel by voxel over [`enumerate_traversal`].
pub fn visual_gain_oracle(grid: &VoxelGrid, v: &Viewpoint, model: &DepthSensorModel, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for d in frustum_rays(model, &v.direction, model.rays, seed) {
        let (voxels, hit) = enumerate_traversal(grid, &v.position, &d, model.max_range, true)?;
        let upto = voxels.len() - usize::from(hit);
        let mut ray = 0.0;
        for &x in &voxels[..upto] {
            if !grid.is_observed(x) {
                ray += bernoulli_entropy(grid.probability(x));
            }
        }
        total += ray;
    }
    Ok(total)
}

/// Coverage gain evaluated voxel by voxel over [`enumerate_traversal`].
pub fn coverage_gain_oracle(grid: &VoxelGrid, v: &Viewpoint, model: &ProbeSensorModel, seed: u64) -> Result<f64> {
    let value = 2f64.ln();
    let mut total = 0.0;
    for d in sphere_rays(model.rays, seed) {
        let (voxels, _) = enumerate_traversal(grid, &v.position, &d, model.radius, true)?;
        let mut ray = 0.0;
        for &x in &voxels {
            if grid.state(x) == VoxelState::Occupied && !grid.is_covered(x) {
                ray += value;
            }
        }
        total += ray;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmap::OccupancyParams;
    use nalgebra::Vector3;

    #[test]
    fn quantile_reference_values() {
        assert!(bisection_quantile(0.5).unwrap().abs() < 1e-12);
        assert!((bisection_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-10);
        assert!((bisection_quantile(0.7).unwrap() - 0.524_400_512_708_041_1).abs() < 1e-10);
        assert!(bisection_quantile(1.0).is_err());
    }

    #[test]
    fn central_difference_of_a_quadratic() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[1], x[1] * x[1]]);
        let j = central_difference(f, &DVector::from_vec(vec![2.0, 3.0]), 1e-5);
        let want = DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 0.0, 6.0]);
        assert!(relative_error(&j, &want) < 1e-9);
    }

    #[test]
    fn oracle_qp_box() {
        // min ½|u|² - [2, 2]·u, u ≤ 1 → u = (1, 1), objective -3.
        let p = QProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![-2.0, -2.0]))
            .with_bounds(None, Some(DVector::from_element(2, 1.0)));
        let s = projected_gradient_qp(&p, 1e-14, 100_000).unwrap();
        assert!((s.objective + 3.0).abs() < 1e-10, "{}", s.objective);
    }

    #[test]
    fn enumeration_matches_axis_ray() {
        let g = VoxelGrid::cube(1.0, 0.05, OccupancyParams::default()).unwrap();
        let o = Vector3::new(0.025, 0.025, 0.025);
        let (v, hit) = enumerate_traversal(&g, &o, &Vector3::x(), 2.0, true).unwrap();
        assert_eq!(v.len(), 20);
        assert!(!hit);
        let d = Vector3::new(1.0, 1.0, 1.0).normalize();
        let (v, _) = enumerate_traversal(&g, &o, &d, 2.0, false).unwrap();
        assert_eq!(v, g.traverse(&o, &d, 2.0, false).unwrap().voxels);
    }
}
