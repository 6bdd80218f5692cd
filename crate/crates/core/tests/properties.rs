//! Property tests over randomly drawn inputs.

use nalgebra::{DVector, Matrix4, Rotation3, Unit, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pipescan_core::controller::{build_objective, ControllerParams};
use pipescan_core::estimation::{canonicalize, fit_plane, PointSample};
use pipescan_core::kinematics::{default_robot, Configuration, PROBE};
use pipescan_core::oracle;
use pipescan_core::planner::{
    coverage_gain, select_next, visual_gain, weighted_gain, Viewpoint,
};
use pipescan_core::primitives::{
    point_line_distance, point_line_vfi_row, point_plane_distance, point_plane_vfi_row, Line, Plane,
};
use pipescan_core::qpsolver::{kkt_residuals, solve, QpStatus};
use pipescan_core::sensing::{frustum_rays, sphere_rays, DepthSensorModel, ProbeSensorModel};
use pipescan_core::svfi::{buffer, surrogate_row, ChanceParams, PlaneBelief};
use pipescan_core::validation::{random_configuration, random_feasible_qp, random_ig_scenario};
use pipescan_core::worldmap::{OccupancyParams, VoxelGrid};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss3(r: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| r.sample(rand_distr::StandardNormal))
}

fn unit3(r: &mut ChaCha8Rng) -> Vector3<f64> {
    gauss3(r).normalize()
}

fn config(seed: u64) -> Configuration<f64> {
    random_configuration(&default_robot(), &mut rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fk_equivariant_under_base_motion(seed in any::<u64>(), dx in -2.0..2.0f64, dy in -2.0..2.0f64, dphi in -3.0..3.0f64) {
        let m = default_robot::<f64>();
        let q = config(seed);
        let a = m.forward_kinematics(&q).unwrap();
        // Rotate the base pose about the world origin by dphi, then translate.
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), dphi);
        let base = rot * Vector3::new(q.base.x, q.base.y, 0.0) + Vector3::new(dx, dy, 0.0);
        let moved = Configuration::new(base.x, base.y, q.base.phi + dphi, q.arm.clone());
        let b = m.forward_kinematics(&moved).unwrap();
        let want = rot * a.position + Vector3::new(dx, dy, 0.0);
        prop_assert!((b.position - want).amax() < 1e-12);
        prop_assert!((b.direction - rot * a.direction).amax() < 1e-12);
    }

    #[test]
    fn tool_direction_is_unit(seed in any::<u64>()) {
        let t = default_robot::<f64>().forward_kinematics(&config(seed)).unwrap();
        prop_assert!((t.direction.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn plane_distance_is_affine_in_point(seed in any::<u64>(), s in -3.0..3.0f64) {
        let mut r = rng(seed);
        let plane = Plane::new(unit3(&mut r), r.random_range(-1.0..1.0));
        let (a, b) = (gauss3(&mut r), gauss3(&mut r));
        let lhs = point_plane_distance(&(a + b * s), &plane) + plane.offset;
        let rhs = point_plane_distance(&a, &plane) + plane.offset + s * (point_plane_distance(&b, &plane) + plane.offset);
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + a.norm() + (b * s).norm()));
    }

    #[test]
    fn line_distance_invariant_along_axis(seed in any::<u64>(), s in -5.0..5.0f64) {
        let mut r = rng(seed);
        let line = Line::new(gauss3(&mut r), gauss3(&mut r), 0.05);
        let t = gauss3(&mut r);
        let d0 = point_line_distance(&t, &line);
        let d1 = point_line_distance(&(t + line.direction * s), &line);
        prop_assert!((d0 - d1).abs() < 1e-12 * (1.0 + d0 + s.abs()));
    }

    #[test]
    fn vfi_equality_gives_commanded_distance_rate(seed in any::<u64>(), eta in 0.1..5.0f64) {
        let m = default_robot::<f64>();
        let q = config(seed);
        let (p, jac) = m.point_jacobian(&q, PROBE).unwrap();
        let mut r = rng(seed ^ 1);
        let plane = Plane::through(unit3(&mut r), &(p - unit3(&mut r) * 0.3));
        let line = Line::new(p + unit3(&mut r) * 0.4, unit3(&mut r), 0.05);
        for row in [
            point_plane_vfi_row(&p, &jac, &plane, 0.1, eta),
            point_line_vfi_row(&p, &jac, &line, 0.1, eta).unwrap(),
        ] {
            // Minimum-norm q̇ putting the row at equality.
            let a = &row.coeffs;
            let qdot = a * (row.bound / a.norm_squared());
            let d = row.distance.unwrap();
            // ḋ = -a·q̇ from the row definition; d̃ = d - d_safe.
            let rate = -a.dot(&qdot);
            prop_assert!((rate + eta * (d - 0.1)).abs() < 1e-10 * (1.0 + d.abs() * eta));
        }
    }

    #[test]
    fn zero_covariance_surrogate_is_deterministic_row(seed in any::<u64>()) {
        let m = default_robot::<f64>();
        let q = config(seed);
        let (p, jac) = m.point_jacobian(&q, PROBE).unwrap();
        let mut r = rng(seed);
        let plane = Plane::through(unit3(&mut r), &(p - unit3(&mut r) * r.random_range(0.0..1.0)));
        let qdot = DVector::from_fn(m.dim(), |_, _| r.random_range(-1.0..1.0));
        let params = ChanceParams { alpha: r.random_range(0.01..0.99), eta: r.random_range(0.1..3.0), d_safe: 0.1 };
        let s = surrogate_row(&PlaneBelief::certain(plane), &p, &jac, &qdot, &params).unwrap();
        let d = point_plane_vfi_row(&p, &jac, &plane, params.d_safe, params.eta);
        prop_assert_eq!(&s.coeffs, &d.coeffs);
        prop_assert!((s.bound - d.bound).abs() < 1e-12);
    }

    #[test]
    fn surrogate_bound_monotone(seed in any::<u64>(), a1 in 0.5..0.99f64, da in 0.0..0.009f64, k in 0usize..4, extra in 0.0..1e-3f64) {
        let m = default_robot::<f64>();
        let q = config(seed);
        let (p, jac) = m.point_jacobian(&q, PROBE).unwrap();
        let mut r = rng(seed);
        let plane = Plane::through(unit3(&mut r), &(p - unit3(&mut r) * 0.5));
        let cov = Matrix4::from_diagonal(&nalgebra::Vector4::from_fn(|_, _| r.random_range(1e-6..1e-4)));
        let qdot = DVector::from_fn(m.dim(), |_, _| r.random_range(-0.5..0.5));
        let belief = PlaneBelief { plane, covariance: cov };
        let row = |b: &PlaneBelief<f64>, alpha: f64| {
            surrogate_row(b, &p, &jac, &qdot, &ChanceParams { alpha, eta: 1.0, d_safe: 0.1 }).unwrap().bound
        };
        prop_assert!(row(&belief, a1 + da) <= row(&belief, a1));
        let mut wider = belief.clone();
        wider.covariance[(k, k)] += extra;
        prop_assert!(row(&wider, 0.7) <= row(&belief, 0.7) + 1e-15);
    }

    #[test]
    fn buffer_scales_with_gradient(seed in any::<u64>(), c in -4.0..4.0f64, sigma in 1e-3..0.1f64) {
        // With η = 0 the gradient is [J q̇; 0], so scaling q̇ scales it.
        let m = default_robot::<f64>();
        let q = config(seed);
        let (p, jac) = m.point_jacobian(&q, PROBE).unwrap();
        let mut r = rng(seed);
        let belief = PlaneBelief {
            plane: Plane::new(unit3(&mut r), 0.0),
            covariance: Matrix4::identity() * sigma * sigma,
        };
        let qdot = DVector::from_fn(m.dim(), |_, _| r.random_range(-1.0..1.0));
        let params = ChanceParams { alpha: 0.8, eta: 0.0, d_safe: 0.1 };
        let b1 = buffer(&belief, &p, &jac, &qdot, &params).unwrap();
        let bc = buffer(&belief, &p, &jac, &(&qdot * c), &params).unwrap();
        prop_assert!((bc - c.abs() * b1).abs() < 1e-10 * (1.0 + b1.abs()));
    }

    #[test]
    fn canonicalize_idempotent(seed in any::<u64>(), offset in -2.0..2.0f64) {
        let mut r = rng(seed);
        let p = Plane::new(unit3(&mut r), offset);
        let c = canonicalize(p);
        prop_assert_eq!(canonicalize(c), c);
        prop_assert!(c.offset >= 0.0);
    }

    #[test]
    fn plane_fit_equivariant_under_rigid_motion(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = unit3(&mut r);
        let plane = Plane::new(n, r.random_range(-1.0..1.0));
        let (u, v) = {
            let u = n.cross(&unit3(&mut r)).normalize();
            (u, n.cross(&u))
        };
        let pts: Vec<PointSample<f64>> = (0..60)
            .map(|_| {
                let p = n * plane.offset + u * r.random_range(-0.5..0.5) + v * r.random_range(-0.5..0.5)
                    + n * r.random_range(-0.004..0.004);
                PointSample::new(p, 0.004)
            })
            .collect();
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(unit3(&mut r)), r.random_range(-3.0..3.0));
        let shift = gauss3(&mut r);
        let moved: Vec<_> = pts.iter().map(|s| PointSample::new(rot * s.position + shift, s.noise_std)).collect();
        let a = fit_plane(&pts, 10).unwrap().plane;
        let b = fit_plane(&moved, 10).unwrap().plane;
        let na = rot * a.normal;
        let sign = na.dot(&b.normal).signum();
        prop_assert!((na * sign - b.normal).amax() < 1e-8);
        prop_assert!(((a.offset + na.dot(&shift)) * sign - b.offset).abs() < 1e-8);
    }

    #[test]
    fn qp_solutions_satisfy_kkt_and_match_oracle(seed in any::<u64>()) {
        let p = random_feasible_qp(&mut rng(seed));
        let s = solve(&p, 1e-12, 500).unwrap();
        prop_assert_eq!(s.status, QpStatus::Optimal);
        prop_assert!(kkt_residuals(&p, &s).max() < 1e-8);
        prop_assert_eq!(&solve(&p, 1e-12, 500).unwrap(), &s);
        let o = oracle::projected_gradient_qp(&p, 1e-15, 200_000).unwrap();
        prop_assert!((s.objective - o.objective).abs() <= 1e-6 * o.objective.abs().max(1.0));
    }

    #[test]
    fn more_damping_never_lengthens_step(seed in any::<u64>(), l1 in 0.01..5.0f64, dl in 0.0..5.0f64) {
        let m = default_robot::<f64>();
        let jac = m.task_jacobian(&config(seed)).unwrap();
        let mut r = rng(seed);
        let e = Vector6::from_fn(|_, _| r.random_range(-0.5..0.5));
        let norm = |l: f64| solve(&build_objective(&jac, &e, 6.0, l, 5e3, 0), 1e-12, 100).unwrap().x.norm();
        prop_assert!(norm(l1 + dl) <= norm(l1) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn traversal_matches_slab_clipping(seed in any::<u64>()) {
        let g = VoxelGrid::cube(1.0, 0.05, OccupancyParams::default()).unwrap();
        let mut r = rng(seed);
        let o = Vector3::from_fn(|_, _| r.random_range(0.001..0.999));
        let d = unit3(&mut r);
        let len = r.random_range(0.05..2.0);
        let trace = g.traverse(&o, &d, len, false).unwrap();
        // Parametric overlap of [0, len) with each voxel box.
        let overlap = |v: [usize; 3]| {
            let (mut lo, mut hi) = (0.0f64, len);
            for a in 0..3 {
                let b0 = g.origin[a] + v[a] as f64 * g.resolution;
                let b1 = b0 + g.resolution;
                if d[a] == 0.0 {
                    if o[a] < b0 || o[a] >= b1 { return -1.0; }
                } else {
                    let (t0, t1) = ((b0 - o[a]) / d[a], (b1 - o[a]) / d[a]);
                    lo = lo.max(t0.min(t1));
                    hi = hi.min(t0.max(t1));
                }
            }
            hi - lo
        };
        let tol = 1e-9;
        let listed: std::collections::HashSet<_> = trace.voxels.iter().copied().collect();
        prop_assert_eq!(listed.len(), trace.voxels.len());
        for &v in &trace.voxels {
            prop_assert!(overlap(v) > -tol, "{:?} listed without overlap", v);
        }
        for v in g.indices() {
            if !listed.contains(&v) {
                prop_assert!(overlap(v) < tol, "{:?} crossed but not listed ({})", v, overlap(v));
            }
        }
    }

    #[test]
    fn logodds_stay_clamped_and_census_partitions(seed in any::<u64>()) {
        let params = OccupancyParams::default();
        let mut g = VoxelGrid::cube(0.5, 0.05, params).unwrap();
        let mut r = rng(seed);
        for _ in 0..3000 {
            let v = [r.random_range(0..10), r.random_range(0..10), r.random_range(0..10)];
            g.update(v, r.random_range(-3.0..3.0));
        }
        if r.random_bool(0.5) {
            g.mark_unknown_residual();
        }
        for v in g.indices() {
            let l = g.logodds(v);
            prop_assert!(l >= params.clamp_min && l <= params.clamp_max);
        }
        let c = g.census(2f64.ln());
        prop_assert_eq!(c.total(), g.len());
    }

    #[test]
    fn gains_nonnegative_and_vanish_when_done(seed in any::<u64>()) {
        let (mut g, v) = random_ig_scenario(seed).unwrap();
        let depth = DepthSensorModel { rays: 50, ..Default::default() };
        let probe = ProbeSensorModel { rays: 50, ..Default::default() };
        prop_assert!(visual_gain(&g, &v, &depth, seed).unwrap() >= 0.0);
        prop_assert!(coverage_gain(&g, &v, &probe, seed).unwrap() >= 0.0);
        let all: Vec<_> = g.indices().collect();
        for &x in &all {
            if !g.is_observed(x) {
                g.update(x, -0.1);
            }
        }
        g.mark_covered(&all);
        prop_assert_eq!(visual_gain(&g, &v, &depth, seed).unwrap(), 0.0);
        prop_assert_eq!(coverage_gain(&g, &v, &probe, seed).unwrap(), 0.0);
    }

    #[test]
    fn weighted_argmax_invariant_under_scaling(seed in any::<u64>(), scale in 0.01..100.0f64, beta in 0.0..=1.0f64) {
        let mut r = rng(seed);
        let mut cands: Vec<Viewpoint> = (0..20)
            .map(|_| {
                let mut v = Viewpoint::new(gauss3(&mut r), unit3(&mut r));
                v.g_v = r.random_range(0.0..50.0);
                v.g_c = r.random_range(0.0..50.0);
                v.g_w = weighted_gain(v.g_v, v.g_c, beta);
                v
            })
            .collect();
        let (i, _, _) = select_next(&cands).unwrap();
        let scaled_best = cands[i].g_w * scale;
        for v in &mut cands {
            v.g_v *= scale;
            v.g_c *= scale;
            v.g_w = weighted_gain(v.g_v, v.g_c, beta);
        }
        let (j, _, _) = select_next(&cands).unwrap();
        // Rounding may only reorder exact ties.
        prop_assert!(i == j || (cands[j].g_w - scaled_best).abs() <= 1e-12 * scaled_best.abs());
        prop_assert_eq!(select_next(&cands).unwrap().0, j);
    }

    #[test]
    fn ray_generation_deterministic(seed in any::<u64>()) {
        let m = DepthSensorModel::default();
        let axis = unit3(&mut rng(seed));
        prop_assert_eq!(frustum_rays(&m, &axis, 64, seed), frustum_rays(&m, &axis, 64, seed));
        prop_assert_eq!(sphere_rays(64, seed), sphere_rays(64, seed));
    }
}

/// Chi-square of sphere rays over 8 octants × 4 azimuth sectors of each.
#[test]
fn sphere_rays_are_uniform() {
    let n = 100_000;
    let bins = 16usize;
    let mut counts = vec![0usize; bins];
    for d in sphere_rays(n, 99) {
        // Equal-area bins: 4 bands of z (uniform on the sphere) × 4 azimuth sectors.
        let zb = (((d.z + 1.0) / 2.0 * 4.0) as usize).min(3);
        let az = d.y.atan2(d.x) + std::f64::consts::PI;
        let ab = ((az / (2.0 * std::f64::consts::PI) * 4.0) as usize).min(3);
        counts[zb * 4 + ab] += 1;
    }
    let e = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 15 degrees of freedom: the p = 0.001 critical value is 37.70.
    assert!(chi2 < 37.70, "chi-square {chi2}");
}

/// Frustum rays: chi-square on a 4 × 4 grid of tangent-plane angle bins,
/// which are equiprobable when rays are uniform in pan and tilt.
#[test]
fn frustum_rays_are_uniform_in_angle() {
    let m = DepthSensorModel::default();
    let axis = Vector3::new(0.3, -0.2, 0.9).normalize();
    let (f, h, v) = pipescan_core::sensing::camera_frame(&axis);
    let (hp, ht) = (m.h_fov_deg.to_radians() / 2.0, m.v_fov_deg.to_radians() / 2.0);
    let n = 100_000;
    let mut counts = [0usize; 16];
    for d in frustum_rays(&m, &axis, n, 5) {
        let pan = d.dot(&h).atan2(d.dot(&f));
        let tilt = d.dot(&v).asin();
        let pb = (((pan + hp) / (2.0 * hp) * 4.0) as usize).min(3);
        let tb = (((tilt + ht) / (2.0 * ht) * 4.0) as usize).min(3);
        counts[tb * 4 + pb] += 1;
    }
    let e = n as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 37.70, "chi-square {chi2} counts {counts:?}");
}

#[test]
fn controller_rows_hold_on_optimal_ticks() {
    use pipescan_core::controller::{Controller, RowKind};
    let m = default_robot::<f64>();
    let params = ControllerParams::default();
    let mut c = Controller::new(m.clone(), params).unwrap();
    let mut r = rng(3);
    let beliefs: Vec<PlaneBelief<f64>> = pipescan_core::controller::WorkspaceBox::cube(1.5).planes()[..4]
        .iter()
        .map(|p| PlaneBelief { plane: *p, covariance: Matrix4::identity() * 1e-4 })
        .collect();
    let lines = vec![Line::new(Vector3::new(1.1, 0.75, 0.7), Vector3::y(), 0.05)];
    let mut q = Configuration::new(0.75, 0.75, 0.3, DVector::from_vec(vec![0.0, 0.3, -0.5, 0.0, 0.4, 0.0]));
    for _ in 0..300 {
        let x = m.forward_kinematics(&q).unwrap();
        let target = pipescan_core::kinematics::TaskVector::new(x.position + gauss3(&mut r) * 0.2, unit3(&mut r));
        let tick = c.control_step(&q, &target, &beliefs, &lines).unwrap();
        assert_eq!(tick.status, QpStatus::Optimal);
        for row in &tick.rows {
            match row.kind {
                RowKind::Equality => assert!(row.margin.abs() < 1e-9),
                RowKind::Hard | RowKind::Chance => assert!(row.margin > -1e-8, "{} {}", row.label, row.margin),
                RowKind::Slack => {
                    let s = tick.slacks[row.slack.unwrap()];
                    assert!(row.margin + s > -1e-8, "{} {} {}", row.label, row.margin, s);
                }
            }
        }
        assert!(tick.slacks.amax() < 0.1);
        q = pipescan_core::sim::step(&m, &q, &tick.u, 0.01).q;
    }
}
