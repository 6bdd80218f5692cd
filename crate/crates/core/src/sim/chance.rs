//! Monte Carlo validation of the chance-constraint surrogate.

use nalgebra::{DVector, Matrix4, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kinematics::{default_robot, Configuration, RobotModel, PROBE};
use crate::primitives::{point_plane_distance, Plane};
use crate::seeds;
use crate::svfi::{monte_carlo_satisfaction, surrogate_row, ChanceParams, PlaneBelief};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChanceValidationParams {
    pub alphas: [f64; 4],
    pub geometries: usize,
    pub samples: usize,
    pub eta: f64,
    pub d_safe: f64,
    /// Upper bound on the per-component normal standard deviation.
    pub max_normal_std: f64,
    pub max_offset_std: f64,
}

impl Default for ChanceValidationParams {
    fn default() -> Self {
        Self {
            alphas: [0.5, 0.7, 0.9, 0.95],
            geometries: 20,
            samples: 100_000,
            eta: 1.0,
            d_safe: 0.1,
            max_normal_std: 0.005,
            max_offset_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChanceCell {
    pub alpha: f64,
    pub geometry: usize,
    pub renormalized: f64,
    pub raw: f64,
    /// `α − 3√(α(1−α)/n)`.
    pub threshold: f64,
    /// Surrogate margin at the constructed control (zero on the boundary).
    pub boundary_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChanceReport {
    pub cells: Vec<ChanceCell>,
    pub samples: usize,
}

impl ChanceReport {
    pub fn passed(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    pub fn worst_excess(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.renormalized - c.threshold)
            .fold(f64::INFINITY, f64::min)
    }
}

/// A probe position, its Jacobian, a plane belief and an approach direction.
#[derive(Debug, Clone)]
pub struct ChanceGeometry {
    pub point: Vector3<f64>,
    pub jacobian: nalgebra::Matrix3xX<f64>,
    pub belief: PlaneBelief<f64>,
    pub direction: DVector<f64>,
}

/// `[[A, b], [bᵀ, σ_d²]]` with `A = (P R diag(σ_n) Rᵀ P)²`, `P = I - n nᵀ`,
/// and `b = ρ σ_d A^{1/2} u`, which is PSD for `|ρ| ≤ 1`. The projection
/// keeps normal uncertainty tangent to the unit sphere, as a fitted plane's
/// is.
fn random_covariance(rng: &mut impl Rng, normal: &Vector3<f64>, max_n: f64, max_d: f64) -> Matrix4<f64> {
    let r = nalgebra::Matrix3::<f64>::from_fn(|_, _| StandardNormal.sample(rng)).qr().q();
    let sn = nalgebra::Vector3::from_fn(|_, _| rng.random_range(0.2 * max_n..max_n));
    let p = nalgebra::Matrix3::identity() - normal * normal.transpose();
    let root = p * r * nalgebra::Matrix3::from_diagonal(&sn) * r.transpose() * p;
    let sd = rng.random_range(0.2 * max_d..max_d);
    let u: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng)).normalize();
    let b = root * u * (rng.random_range(-0.5..0.5) * sd);
    let mut c = Matrix4::zeros();
    c.fixed_view_mut::<3, 3>(0, 0).copy_from(&(root * root));
    c.fixed_view_mut::<3, 1>(0, 3).copy_from(&b);
    c.fixed_view_mut::<1, 3>(3, 0).copy_from(&b.transpose());
    c[(3, 3)] = sd * sd;
    c
}

/// Random probe geometry facing a plane at a distance in `[0.3, 1.0]` m.
pub fn random_geometry(model: &RobotModel<f64>, params: &ChanceValidationParams, seed: u64) -> Result<ChanceGeometry> {
    let mut rng = seeds::derived_rng(seed, &[seeds::stream::GEOMETRY]);
    let arm = DVector::from_iterator(
        model.n_arm(),
        model.joints.iter().map(|j| rng.random_range(j.lower..=j.upper)),
    );
    let q = Configuration::new(
        rng.random_range(0.3..1.2),
        rng.random_range(0.3..1.2),
        rng.random_range(-3.1..3.1),
        arm,
    );
    let (point, jacobian) = model.point_jacobian(&q, PROBE)?;
    let normal: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng)).normalize();
    let dist = rng.random_range(0.3..1.0);
    let plane = Plane::through(normal, &(point - normal * dist));
    let covariance = random_covariance(&mut rng, &normal, params.max_normal_std, params.max_offset_std);
    let belief = PlaneBelief { plane, covariance };
    belief.validate()?;
    // Approach direction: reduces the distance at unit rate.
    let grad = jacobian.transpose() * normal;
    let mut direction = DVector::from_fn(model.dim(), |_, _| StandardNormal.sample(&mut rng));
    let along = direction.dot(&grad);
    direction -= &grad * (along / grad.norm_squared());
    direction -= &grad / grad.norm_squared();
    Ok(ChanceGeometry {
        point,
        jacobian,
        belief,
        direction,
    })
}

fn boundary_margin(g: &ChanceGeometry, qdot: &DVector<f64>, params: &ChanceParams<f64>) -> Result<f64> {
    let row = surrogate_row(&g.belief, &g.point, &g.jacobian, qdot, params)?;
    Ok(row.margin(qdot))
}

/// Scale `s` such that `q̇ = s·w` lies on the surrogate boundary when the
/// buffer is evaluated at `q̇` itself.
pub fn boundary_control(g: &ChanceGeometry, params: &ChanceParams<f64>) -> Result<DVector<f64>> {
    let at = |s: f64| boundary_margin(g, &(&g.direction * s), params);
    let (mut lo, mut hi) = (0.0, 1.0);
    if at(lo)? <= 0.0 {
        return Err(Error::InvalidParameter("geometry already violates the surrogate at rest".into()));
    }
    while at(hi)? > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidParameter("no boundary crossing along the approach".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if at(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The feasible end of the bracket.
    Ok(&g.direction * lo)
}

pub fn run_chance_validation(params: &ChanceValidationParams, seed: u64) -> Result<ChanceReport> {
    let model = default_robot::<f64>();
    let mut cells = Vec::new();
    for k in 0..params.geometries {
        let g = random_geometry(&model, params, seeds::derive(seed, &[k as u64]))?;
        debug_assert!(point_plane_distance(&g.point, &g.belief.plane) > 0.0);
        for (a_idx, &alpha) in params.alphas.iter().enumerate() {
            let cp = ChanceParams {
                alpha,
                eta: params.eta,
                d_safe: params.d_safe,
            };
            let qdot = boundary_control(&g, &cp)?;
            let margin = boundary_margin(&g, &qdot, &cp)?;
            let mc_seed = seeds::derive(seed, &[k as u64, a_idx as u64]);
            let rep = monte_carlo_satisfaction(
                &g.belief.plane,
                &g.belief.covariance,
                &g.point,
                &g.jacobian,
                &qdot,
                &cp,
                params.samples,
                mc_seed,
            )?;
            let threshold = alpha - 3.0 * (alpha * (1.0 - alpha) / params.samples as f64).sqrt();
            cells.push(ChanceCell {
                alpha,
                geometry: k,
                renormalized: rep.renormalized,
                raw: rep.raw,
                threshold,
                boundary_margin: margin,
                pass: rep.renormalized >= threshold,
            });
        }
    }
    Ok(ChanceReport {
        cells,
        samples: params.samples,
    })
}
