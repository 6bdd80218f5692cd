//! Plane fitting with parameter covariance.

use nalgebra::{Matrix3, Matrix3x2, Matrix4, Matrix4x3, SymmetricEigen, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::primitives::Plane;
use crate::scalar::Real;
use crate::seeds;
use crate::svfi::PlaneBelief;

/// Floor applied to each diagonal entry of the reported covariance.
pub const VARIANCE_FLOOR: f64 = 1e-10;
pub const DEFAULT_MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample<T: Real = f64> {
    pub position: Vector3<T>,
    /// Isotropic measurement noise standard deviation (m).
    pub noise_std: T,
}

impl<T: Real> PointSample<T> {
    pub fn new(position: Vector3<T>, noise_std: T) -> Self {
        Self { position, noise_std }
    }
}

/// Flips `(n, d)` so that `d ≥ 0`, or, when `d = 0`, so that the first nonzero
/// normal component is positive.
pub fn canonicalize<T: Real>(plane: Plane<T>) -> Plane<T> {
    let flip = if plane.offset != T::zero() {
        plane.offset < T::zero()
    } else {
        plane
            .normal
            .iter()
            .find(|c| **c != T::zero())
            .is_some_and(|c| *c < T::zero())
    };
    if flip {
        Plane {
            normal: -plane.normal,
            offset: -plane.offset,
        }
    } else {
        plane
    }
}

/// Orthonormal basis of the plane orthogonal to unit `n`.
fn tangent_basis<T: Real>(n: &Vector3<T>) -> Matrix3x2<T> {
    let helper = if n.x.abs() < T::lit(0.9) { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    Matrix3x2::from_columns(&[u, v])
}

/// Weighted least-squares plane with a Laplace-approximation covariance.
///
/// The normal is the smallest-eigenvalue direction of the weighted scatter
/// (weights `1/σ²`). The covariance is computed in the three free parameters
/// (two tangent rotations of the normal and the offset), scaled by the
/// reduced chi-square of the residuals, and lifted to `(n, d)`.
pub fn fit_plane<T: Real>(points: &[PointSample<T>], min_points: usize) -> Result<PlaneBelief<T>> {
    let needed = min_points.max(3);
    if points.len() < needed {
        return Err(Error::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    let mut wsum = T::zero();
    let mut centroid = Vector3::zeros();
    for p in points {
        if !(p.noise_std > T::zero()) {
            return Err(Error::InvalidParameter("noise std must be positive".into()));
        }
        let w = T::one() / (p.noise_std * p.noise_std);
        wsum += w;
        centroid += p.position * w;
    }
    centroid /= wsum;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let w = T::one() / (p.noise_std * p.noise_std);
        let r = p.position - centroid;
        scatter += r * r.transpose() * w;
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let (lo, mid, hi) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(hi > T::zero()) || mid <= hi * T::lit(1e-12) {
        return Err(Error::RankDeficient);
    }
    let normal: Vector3<T> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let plane = canonicalize(Plane {
        offset: normal.dot(&centroid),
        normal,
    });

    let basis = tangent_basis(&plane.normal);
    let mut hess = Matrix3::<T>::zeros();
    let mut chi2 = T::zero();
    for p in points {
        let w = T::one() / (p.noise_std * p.noise_std);
        let bp = basis.transpose() * p.position;
        let j = Vector3::new(bp.x, bp.y, -T::one());
        hess += j * j.transpose() * w;
        let r = plane.normal.dot(&p.position) - plane.offset;
        chi2 += r * r * w;
    }
    // Smallest-eigenvalue identity: chi² equals the minimal scatter eigenvalue.
    let _ = lo;
    let dof = T::from_usize(points.len() - 3).unwrap();
    let scale = if dof > T::zero() { chi2 / dof } else { T::zero() };
    let inv = hess.try_inverse().ok_or(Error::RankDeficient)?;
    let sigma3 = inv * scale;
    let mut lift = Matrix4x3::zeros();
    lift.fixed_view_mut::<3, 2>(0, 0).copy_from(&basis);
    lift[(3, 2)] = T::one();
    let mut cov: Matrix4<T> = lift * sigma3 * lift.transpose();
    cov = (cov + cov.transpose()) * T::lit(0.5);
    for i in 0..4 {
        cov[(i, i)] = cov[(i, i)].max(T::lit(VARIANCE_FLOOR));
    }
    Ok(PlaneBelief {
        plane,
        covariance: cov,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub min_points: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.02,
            iterations: 200,
            min_points: DEFAULT_MIN_POINTS,
        }
    }
}

fn three_point_plane(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Plane<f64>> {
    let n = (b - a).cross(&(c - a));
    let norm = n.norm();
    if norm < 1e-12 {
        return None;
    }
    let n = n / norm;
    Some(Plane {
        normal: n,
        offset: n.dot(a),
    })
}

fn inliers(points: &[PointSample<f64>], plane: &Plane<f64>, threshold: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (plane.normal.dot(&p.position) - plane.offset).abs() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// RANSAC consensus followed by a least-squares refit on the inliers.
///
/// Hypotheses are scored in parallel, each with its own derived seed; the
/// winner is the largest consensus, ties broken by hypothesis index.
pub fn robust_fit_plane(
    points: &[PointSample<f64>],
    params: &RansacParams,
    seed: u64,
) -> Result<PlaneBelief<f64>> {
    let needed = params.min_points.max(3);
    if points.len() < needed {
        return Err(Error::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    let n = points.len();
    let best = (0..params.iterations)
        .into_par_iter()
        .filter_map(|it| {
            let mut rng = seeds::derived_rng(seed, &[seeds::stream::RANSAC, it as u64]);
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let mut k = rng.random_range(0..n - 2);
            for taken in [i.min(j), i.max(j)] {
                if k >= taken {
                    k += 1;
                }
            }
            let plane = three_point_plane(&points[i].position, &points[j].position, &points[k].position)?;
            let count = points
                .iter()
                .filter(|p| (plane.normal.dot(&p.position) - plane.offset).abs() <= params.inlier_threshold)
                .count();
            Some((count, it, plane))
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        });
    let Some((count, _, plane)) = best else {
        return Err(Error::NoConsensus(0));
    };
    if count < needed {
        return Err(Error::NoConsensus(count));
    }
    let first: Vec<PointSample<f64>> = inliers(points, &plane, params.inlier_threshold)
        .into_iter()
        .map(|i| points[i])
        .collect();
    let refined = fit_plane(&first, needed)?;
    let second: Vec<PointSample<f64>> = inliers(points, &refined.plane, params.inlier_threshold)
        .into_iter()
        .map(|i| points[i])
        .collect();
    if second.len() >= needed && second.len() != first.len() {
        fit_plane(&second, needed)
    } else {
        Ok(refined)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid_points(z: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<PointSample> {
        let gauss = Normal::new(0.0, noise.max(1e-300)).unwrap();
        (0..100)
            .map(|k| {
                let x = (k % 10) as f64 * 0.1 - 0.45;
                let y = (k / 10) as f64 * 0.1 - 0.45;
                let dz = if noise > 0.0 { gauss.sample(rng) } else { 0.0 };
                PointSample::new(Vector3::new(x, y, z + dz), noise.max(0.01))
            })
            .collect()
    }

    #[test]
    fn exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = fit_plane(&grid_points(0.5, 0.0, &mut rng), 10).unwrap();
        assert_abs_diff_eq!(b.plane.normal, Vector3::z(), epsilon = 1e-12);
        assert_abs_diff_eq!(b.plane.offset, 0.5, epsilon = 1e-12);
        for i in 0..4 {
            assert_abs_diff_eq!(b.covariance[(i, i)], VARIANCE_FLOOR, epsilon = 1e-15);
        }
    }

    #[test]
    fn noisy_fit_covariance_matches_refits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fits: Vec<PlaneBelief> = (0..1000)
            .map(|_| fit_plane(&grid_points(0.5, 0.01, &mut rng), 10).unwrap())
            .collect();
        let params: Vec<nalgebra::Vector4<f64>> = fits.iter().map(|f| f.plane.params()).collect();
        let mean = params.iter().fold(nalgebra::Vector4::zeros(), |a, p| a + p) / 1000.0;
        let mut emp = Matrix4::zeros();
        for p in &params {
            emp += (p - mean) * (p - mean).transpose();
        }
        emp /= 999.0;
        let reported = fits.iter().fold(Matrix4::zeros(), |a, f| a + f.covariance) / 1000.0;
        assert!((fits[0].plane.offset - 0.5).abs() < 0.01);
        for i in [0, 1, 3] {
            let ratio = reported[(i, i)] / emp[(i, i)];
            assert!((1.0 / 3.0..3.0).contains(&ratio), "entry {i}: ratio {ratio}");
        }
        let r = fits[0].covariance[(3, 3)] / 1e-6;
        assert!((1.0 / 3.0..3.0).contains(&r), "{r}");
    }

    #[test]
    fn degenerate_inputs() {
        let pts: Vec<PointSample> = (0..3)
            .map(|i| PointSample::new(Vector3::new(i as f64, 2.0 * i as f64, 0.0), 0.01))
            .collect();
        assert!(matches!(fit_plane(&pts, 3), Err(Error::RankDeficient)));
        assert!(matches!(fit_plane(&pts, 10), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn canonical_sign() {
        let p = canonicalize(Plane {
            normal: -Vector3::z(),
            offset: -0.5,
        });
        assert_eq!(p.normal, Vector3::z());
        let q = canonicalize(Plane {
            normal: Vector3::new(0.0, -1.0, 0.0),
            offset: 0.0,
        });
        assert_eq!(q.normal, Vector3::y());
        assert_eq!(canonicalize(p), p);
    }

    #[test]
    fn ransac_with_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = grid_points(0.5, 0.002, &mut rng);
        pts.truncate(80);
        for _ in 0..20 {
            let p = Vector3::new(
                rng.random_range(0.0..1.5),
                rng.random_range(0.0..1.5),
                rng.random_range(0.0..1.5),
            );
            pts.push(PointSample::new(p, 0.002));
        }
        let b = robust_fit_plane(&pts, &RansacParams::default(), 11).unwrap();
        let angle = b.plane.normal.dot(&Vector3::z()).clamp(-1.0, 1.0).acos();
        assert!(angle < 2f64.to_radians());
        assert_eq!(robust_fit_plane(&pts, &RansacParams::default(), 11).unwrap(), b);
    }

    #[test]
    fn ransac_clean_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = grid_points(0.5, 0.001, &mut rng);
        let a = fit_plane(&pts, 10).unwrap();
        let b = robust_fit_plane(&pts, &RansacParams::default(), 5).unwrap();
        assert_abs_diff_eq!(a.plane.normal, b.plane.normal, epsilon = 1e-6);
        assert_abs_diff_eq!(a.plane.offset, b.plane.offset, epsilon = 1e-6);
    }

    #[test]
    fn ransac_pure_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<PointSample> = (0..50)
            .map(|_| {
                PointSample::new(
                    Vector3::new(
                        rng.random_range(0.0..1.5),
                        rng.random_range(0.0..1.5),
                        rng.random_range(0.0..1.5),
                    ),
                    0.001,
                )
            })
            .collect();
        let params = RansacParams {
            inlier_threshold: 0.005,
            ..RansacParams::default()
        };
        assert!(matches!(robust_fit_plane(&pts, &params, 1), Err(Error::NoConsensus(_))));
    }

    #[test]
    fn single_precision_fit() {
        let pts: Vec<PointSample<f32>> = (0..25)
            .map(|k| PointSample::new(Vector3::new((k % 5) as f32 * 0.1, (k / 5) as f32 * 0.1, 0.25), 0.01))
            .collect();
        let b = fit_plane(&pts, 10).unwrap();
        assert!((b.plane.offset - 0.25).abs() < 1e-5);
    }
}
