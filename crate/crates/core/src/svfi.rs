//! Stochastic point-to-plane VFIs.
//!
//! The plane estimate `π̂ = [n̂; d̂]` is Gaussian with covariance `Σ_π`. The
//! chance constraint `Pr(f(π) ≥ η d_safe) ≥ α`, with
//! `f(π) = nᵀ(J_t q̇ + η t) - η d`, is linear in `π`, so it reduces to the
//! deterministic row
//!
//! ```text
//! -n̂ᵀ J_t q̇ ≤ η (n̂ᵀ t - d̂ - d_safe) - Φ⁻¹(α) σ_f
//! ```
//!
//! where `σ_f² = ∇fᵀ Σ_π ∇f`. Because `∇f` depends on `q̇`, the buffer is
//! evaluated with the velocity commanded in the previous control period.

use nalgebra::{DVector, Matrix3xX, Matrix4, SymmetricEigen, Vector3, Vector4};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::controller::{ConstraintRow, RowKind};
use crate::error::{Error, Result};
use crate::primitives::{point_plane_distance, Plane};
use crate::scalar::Real;
use crate::seeds;

/// Gaussian belief over plane parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneBelief<T: Real = f64> {
    pub plane: Plane<T>,
    pub covariance: Matrix4<T>,
}

impl<T: Real> PlaneBelief<T> {
    pub fn certain(plane: Plane<T>) -> Self {
        Self {
            plane,
            covariance: Matrix4::zeros(),
        }
    }

    /// Checks symmetry (1e-12) and positive semidefiniteness (min eigenvalue ≥ -1e-10).
    pub fn validate(&self) -> Result<()> {
        let asym = (self.covariance - self.covariance.transpose()).norm().as_f64();
        if asym >= 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "plane covariance not symmetric (asymmetry {asym:e})"
            )));
        }
        let min_eig = SymmetricEigen::new(self.covariance)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, e| m.min(e.as_f64()));
        if min_eig < -1e-10 {
            return Err(Error::InvalidCovariance(min_eig));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChanceParams<T: Real = f64> {
    pub alpha: T,
    pub eta: T,
    pub d_safe: T,
}

impl<T: Real> ChanceParams<T> {
    pub fn validate(&self) -> Result<()> {
        let a = self.alpha.as_f64();
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Probability(a));
        }
        if self.eta < T::zero() || self.d_safe < T::zero() {
            return Err(Error::InvalidParameter("eta and d_safe must be non-negative".into()));
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF by bisection on [`std_normal_cdf`].
pub fn std_normal_quantile<T: Real>(alpha: T) -> Result<T> {
    let a = alpha.as_f64();
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Probability(a));
    }
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if std_normal_cdf(mid) < a {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(T::lit(0.5 * (lo + hi)))
}

/// `∇f(π) = [J_t q̇ + η t; -η]`.
pub fn f_gradient<T: Real>(
    jac_t: &Matrix3xX<T>,
    qdot_prev: &DVector<T>,
    t: &Vector3<T>,
    eta: T,
) -> Vector4<T> {
    let a = jac_t * qdot_prev + t * eta;
    Vector4::new(a.x, a.y, a.z, -eta)
}

/// `σ_f² = ∇fᵀ Σ ∇f`, clamped at zero; rejects quadratic forms below -1e-12.
pub fn propagate_variance<T: Real>(grad: &Vector4<T>, covariance: &Matrix4<T>) -> Result<T> {
    let var = grad.dot(&(covariance * grad));
    if var.as_f64() < -1e-12 {
        return Err(Error::InvalidCovariance(var.as_f64()));
    }
    Ok(var.max(T::zero()))
}

/// Probabilistic buffer `b_α = Φ⁻¹(α) σ_f`.
pub fn buffer<T: Real>(
    belief: &PlaneBelief<T>,
    t: &Vector3<T>,
    jac_t: &Matrix3xX<T>,
    qdot_prev: &DVector<T>,
    params: &ChanceParams<T>,
) -> Result<T> {
    let grad = f_gradient(jac_t, qdot_prev, t, params.eta);
    let var = propagate_variance(&grad, &belief.covariance)?;
    Ok(std_normal_quantile(params.alpha)? * var.sqrt())
}

/// Deterministic surrogate of the chance-constrained point-to-plane VFI.
pub fn surrogate_row<T: Real>(
    belief: &PlaneBelief<T>,
    t: &Vector3<T>,
    jac_t: &Matrix3xX<T>,
    qdot_prev: &DVector<T>,
    params: &ChanceParams<T>,
) -> Result<ConstraintRow<T>> {
    params.validate()?;
    let b = buffer(belief, t, jac_t, qdot_prev, params)?;
    let distance = point_plane_distance(t, &belief.plane);
    let coeffs = -(jac_t.transpose() * belief.plane.normal);
    let bound = params.eta * (distance - params.d_safe) - b;
    Ok(ConstraintRow::new(coeffs, bound, RowKind::Chance)
        .with_distance(distance)
        .with_buffer(b))
}

/// Satisfaction fractions of `f(π) ≥ η d_safe` under sampled planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChanceSampleReport {
    /// Sampled normals renormalized to unit length before evaluation.
    pub renormalized: f64,
    /// Sampled parameters used as drawn.
    pub raw: f64,
    pub samples: usize,
}

const MC_CHUNK: usize = 8192;

/// Monte Carlo estimate of how often the VFI holds when the true plane is
/// distributed as `N(center, covariance)`. Deterministic per seed; chunks are
/// sampled in parallel with per-chunk derived seeds.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_satisfaction(
    center: &Plane<f64>,
    covariance: &Matrix4<f64>,
    t: &Vector3<f64>,
    jac_t: &Matrix3xX<f64>,
    qdot: &DVector<f64>,
    params: &ChanceParams<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<ChanceSampleReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    let eig = SymmetricEigen::new(*covariance);
    let mut sqrt_diag = Matrix4::zeros();
    for i in 0..4 {
        sqrt_diag[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    let factor = eig.eigenvectors * sqrt_diag;
    let velocity = jac_t * qdot;
    let a = velocity + t * params.eta;
    let threshold = params.eta * params.d_safe;
    // Absorbs rounding when the control sits exactly on the boundary.
    let tol = 1e-12 * (1.0 + a.norm() + params.eta * (center.offset.abs() + params.d_safe));
    let mean = center.params();
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let (renorm, raw) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeds::derived_rng(seed, &[seeds::stream::MONTE_CARLO, c as u64]);
            let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let (mut ok_renorm, mut ok_raw) = (0usize, 0usize);
            for _ in 0..count {
                let z = Vector4::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let p = mean + factor * z;
                let n = Vector3::new(p.x, p.y, p.z);
                let offset = p.w;
                if n.dot(&a) - params.eta * offset >= threshold - tol {
                    ok_raw += 1;
                }
                let norm = n.norm();
                if norm > 0.0 && (n / norm).dot(&a) - params.eta * offset >= threshold - tol {
                    ok_renorm += 1;
                }
            }
            (ok_renorm, ok_raw)
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    Ok(ChanceSampleReport {
        renormalized: renorm as f64 / n_samples as f64,
        raw: raw as f64 / n_samples as f64,
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::point_plane_vfi_row;
    use approx::assert_abs_diff_eq;

    const Q70: f64 = 0.524_400_512_708_040_7;
    const Q90: f64 = 1.281_551_565_544_600_4;

    #[test]
    fn quantile_examples() {
        assert_abs_diff_eq!(std_normal_quantile(0.5).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal_quantile(0.7).unwrap(), Q70, epsilon = 1e-9);
        assert_abs_diff_eq!(std_normal_quantile(0.9).unwrap(), Q90, epsilon = 1e-9);
        assert!(matches!(std_normal_quantile(0.0), Err(Error::Probability(_))));
        assert!(matches!(std_normal_quantile(1.0), Err(Error::Probability(_))));
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn gradient_examples() {
        let jac = Matrix3xX::<f64>::identity(3);
        let t = Vector3::new(0.0, 0.0, 0.5);
        let g = f_gradient(&jac, &DVector::zeros(3), &t, 1.0);
        assert_eq!(g, Vector4::new(0.0, 0.0, 0.5, -1.0));
        let g = f_gradient(&jac, &DVector::from_vec(vec![0.0, 0.0, -0.1]), &t, 1.0);
        assert_abs_diff_eq!(g, Vector4::new(0.0, 0.0, 0.4, -1.0), epsilon = 1e-15);
        let qd = DVector::from_vec(vec![0.2, -0.1, 0.3]);
        let g = f_gradient(&jac, &qd, &t, 0.0);
        assert_eq!(g, Vector4::new(0.2, -0.1, 0.3, 0.0));
    }

    #[test]
    fn variance_examples() {
        let g = Vector4::new(0.0, 0.0, 0.4, -1.0);
        assert_eq!(propagate_variance(&g, &Matrix4::zeros()).unwrap(), 0.0);
        assert_abs_diff_eq!(
            propagate_variance(&g, &(Matrix4::identity() * 0.01)).unwrap(),
            0.0116,
            epsilon = 1e-15
        );
        assert_eq!(
            propagate_variance(&Vector4::zeros(), &(Matrix4::identity() * 3.0)).unwrap(),
            0.0
        );
        let bad = -Matrix4::identity() * 0.01;
        assert!(matches!(propagate_variance(&g, &bad), Err(Error::InvalidCovariance(_))));
    }

    #[test]
    fn surrogate_examples() {
        let jac = Matrix3xX::<f64>::identity(3);
        let t = Vector3::new(0.0, 0.0, 0.5);
        let plane = Plane::new(Vector3::z(), 0.0);
        let qd = DVector::from_vec(vec![0.0, 0.0, -0.1]);
        let params = ChanceParams {
            alpha: 0.7,
            eta: 1.0,
            d_safe: 0.1,
        };
        let det = point_plane_vfi_row(&t, &jac, &plane, 0.1, 1.0);
        let zero = surrogate_row(&PlaneBelief::certain(plane), &t, &jac, &qd, &params).unwrap();
        assert_eq!(zero.coeffs, det.coeffs);
        assert_eq!(zero.bound, det.bound);
        assert_eq!(zero.kind, RowKind::Chance);

        let belief = PlaneBelief {
            plane,
            covariance: Matrix4::identity() * 0.01,
        };
        let median = surrogate_row(&belief, &t, &jac, &qd, &ChanceParams { alpha: 0.5, ..params }).unwrap();
        assert_abs_diff_eq!(median.bound, det.bound, epsilon = 1e-12);

        let row = surrogate_row(&belief, &t, &jac, &qd, &params).unwrap();
        assert_abs_diff_eq!(det.bound - row.bound, 0.056_479_663_717_572_61, epsilon = 1e-9);
        assert!(surrogate_row(&belief, &t, &jac, &qd, &ChanceParams { alpha: 1.2, ..params }).is_err());
    }

    #[test]
    fn buffer_monotone_in_alpha_and_covariance() {
        let jac = Matrix3xX::<f64>::identity(3);
        let t = Vector3::new(0.2, -0.1, 0.5);
        let qd = DVector::from_vec(vec![0.1, 0.0, -0.1]);
        let plane = Plane::new(Vector3::z(), 0.0);
        let mut last = f64::INFINITY;
        for alpha in [0.5, 0.6, 0.7, 0.9, 0.95, 0.99] {
            let p = ChanceParams { alpha, eta: 1.0, d_safe: 0.1 };
            let b = surrogate_row(&PlaneBelief { plane, covariance: Matrix4::identity() * 0.01 }, &t, &jac, &qd, &p)
                .unwrap()
                .bound;
            assert!(b <= last);
            last = b;
        }
        let p = ChanceParams { alpha: 0.8, eta: 1.0, d_safe: 0.1 };
        for i in 0..4 {
            let mut last = f64::INFINITY;
            for s in [0.0, 1e-4, 1e-3, 1e-2] {
                let mut cov = Matrix4::identity() * 1e-3;
                cov[(i, i)] += s;
                let b = surrogate_row(&PlaneBelief { plane, covariance: cov }, &t, &jac, &qd, &p)
                    .unwrap()
                    .bound;
                assert!(b <= last + 1e-15);
                last = b;
            }
        }
    }

    #[test]
    fn buffer_scales_linearly_with_gradient() {
        let cov: Matrix4<f64> = Matrix4::identity() * 0.04;
        let g = Vector4::new(0.3, -0.2, 0.5, -1.0);
        let z = std_normal_quantile(0.8f64).unwrap();
        let b1 = z * propagate_variance(&g, &cov).unwrap().sqrt();
        for c in [-3.0f64, 0.5, 2.0, 7.5] {
            let bc = z * propagate_variance(&(g * c), &cov).unwrap().sqrt();
            assert_abs_diff_eq!(bc.abs(), c.abs() * b1.abs(), epsilon = 1e-10);
        }
    }

    #[test]
    fn belief_validation() {
        let plane = Plane::new(Vector3::z(), 0.0);
        let mut cov = Matrix4::identity() * 1e-3;
        assert!(PlaneBelief { plane, covariance: cov }.validate().is_ok());
        cov[(0, 1)] = 1e-6;
        assert!(PlaneBelief { plane, covariance: cov }.validate().is_err());
        let neg = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -1e-6));
        assert!(matches!(
            PlaneBelief { plane, covariance: neg }.validate(),
            Err(Error::InvalidCovariance(_))
        ));
    }

    fn boundary_setup(alpha: f64, cov: Matrix4<f64>) -> (Plane, Vector3<f64>, Matrix3xX<f64>, DVector<f64>, ChanceParams) {
        // a point moving straight at the plane z = 0 with speed v chosen so the
        // surrogate holds with equality; σ_f is evaluated at that same speed
        let plane = Plane::new(Vector3::z(), 0.0);
        let t = Vector3::new(0.1, 0.2, 0.4);
        let jac = Matrix3xX::<f64>::identity(3);
        let params = ChanceParams { alpha, eta: 1.0, d_safe: 0.1 };
        let belief = PlaneBelief { plane, covariance: cov };
        let mut v = 0.0;
        for _ in 0..200 {
            let qd = DVector::from_vec(vec![0.0, 0.0, -v]);
            let row = surrogate_row(&belief, &t, &jac, &qd, &params).unwrap();
            // coeffs·q̇ = bound  ->  v = bound
            v = row.bound;
        }
        (plane, t, jac, DVector::from_vec(vec![0.0, 0.0, -v]), params)
    }

    #[test]
    fn monte_carlo_on_boundary() {
        let cov = Matrix4::from_diagonal(&Vector4::new(1e-5, 1e-5, 1e-5, 4e-4));
        let (plane, t, jac, qd, params) = boundary_setup(0.7, cov);
        let r = monte_carlo_satisfaction(&plane, &cov, &t, &jac, &qd, &params, 100_000, 9).unwrap();
        assert!(r.renormalized >= 0.68 && r.renormalized <= 1.0, "{r:?}");
        assert!(r.raw >= 0.68, "{r:?}");
        let again = monte_carlo_satisfaction(&plane, &cov, &t, &jac, &qd, &params, 100_000, 9).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn monte_carlo_tiny_covariance_strict() {
        let cov = Matrix4::identity() * 1e-12;
        let plane = Plane::new(Vector3::z(), 0.0);
        let t = Vector3::new(0.0, 0.0, 0.5);
        let jac = Matrix3xX::<f64>::identity(3);
        let params = ChanceParams { alpha: 0.7, eta: 1.0, d_safe: 0.1 };
        let qd = DVector::from_vec(vec![0.0, 0.0, -0.2]);
        let r = monte_carlo_satisfaction(&plane, &cov, &t, &jac, &qd, &params, 10_000, 1).unwrap();
        assert_eq!(r.renormalized, 1.0);
        assert_eq!(r.raw, 1.0);
    }

    #[test]
    fn monte_carlo_violated_by_three_sigma() {
        let cov = Matrix4::from_diagonal(&Vector4::new(1e-5, 1e-5, 1e-5, 4e-4));
        let (plane, t, jac, qd, params) = boundary_setup(0.7, cov);
        let grad = f_gradient(&jac, &qd, &t, 1.0);
        let sigma = propagate_variance(&grad, &cov).unwrap().sqrt();
        let mut faster = qd.clone();
        faster[2] -= 3.0 * sigma;
        let r = monte_carlo_satisfaction(&plane, &cov, &t, &jac, &faster, &params, 100_000, 4).unwrap();
        assert!(r.renormalized < 0.5, "{r:?}");
    }
}
