//! Depth-camera frustum and spherical probe models.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::sim::scene::Scene;
use crate::worldmap::Return;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthSensorModel {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub max_range: f64,
    pub min_range: f64,
    /// Rays per information-gain evaluation.
    pub rays: usize,
    /// Pixel grid of a synthetic scan.
    pub scan_cols: usize,
    pub scan_rows: usize,
}

impl Default for DepthSensorModel {
    fn default() -> Self {
        Self {
            h_fov_deg: 60.0,
            v_fov_deg: 45.0,
            max_range: 3.0,
            min_range: 0.3,
            rays: 200,
            scan_cols: 40,
            scan_rows: 30,
        }
    }
}

impl DepthSensorModel {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| (0.0..180.0).contains(&f);
        if !(fov_ok(self.h_fov_deg) && fov_ok(self.v_fov_deg)) {
            return Err(Error::InvalidParameter("field of view must lie in [0, 180) degrees".into()));
        }
        if !(0.0 < self.min_range && self.min_range < self.max_range) {
            return Err(Error::InvalidParameter("need 0 < min_range < max_range".into()));
        }
        if self.rays == 0 || self.scan_cols == 0 || self.scan_rows == 0 {
            return Err(Error::InvalidParameter("ray counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSensorModel {
    pub radius: f64,
    pub rays: usize,
}

impl Default for ProbeSensorModel {
    fn default() -> Self {
        Self { radius: 0.4, rays: 200 }
    }
}

impl ProbeSensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || self.rays == 0 {
            return Err(Error::InvalidParameter("probe radius and ray count must be positive".into()));
        }
        Ok(())
    }
}

/// Measurement corruption applied by [`simulate_depth_scan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanNoise {
    pub range_std: f64,
    pub dropout: f64,
    /// Corrupt returns closer than the minimum range.
    pub min_range_fault: bool,
}

impl Default for ScanNoise {
    fn default() -> Self {
        Self {
            range_std: 0.005,
            dropout: 0.02,
            min_range_fault: false,
        }
    }
}

/// Camera frame `(axis, horizontal, vertical)` for a viewing axis; the
/// horizontal direction is kept level with the floor when possible.
pub fn camera_frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let a = axis.normalize();
    let mut h = Vector3::z().cross(&a);
    if h.norm() < 1e-9 {
        h = Vector3::y().cross(&a);
    }
    let h = h.normalize();
    let v = a.cross(&h);
    (a, h, v)
}

fn frustum_direction(frame: &(Vector3<f64>, Vector3<f64>, Vector3<f64>), pan: f64, tilt: f64) -> Vector3<f64> {
    let (a, h, v) = frame;
    (a * pan.cos() + h * pan.sin()) * tilt.cos() + v * tilt.sin()
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Directions drawn uniformly in pan/tilt angle over the field of view
/// around `axis`.
pub fn frustum_rays(model: &DepthSensorModel, axis: &Vector3<f64>, count: usize, seed: u64) -> Vec<Vector3<f64>> {
    let frame = camera_frame(axis);
    let hp = model.h_fov_deg.to_radians() / 2.0;
    let ht = model.v_fov_deg.to_radians() / 2.0;
    let mut rng = seeds::rng(seed);
    (0..count)
        .map(|_| {
            let pan = uniform(&mut rng, -hp, hp);
            let tilt = uniform(&mut rng, -ht, ht);
            frustum_direction(&frame, pan, tilt)
        })
        .collect()
}

/// Unit directions uniform on the sphere.
pub fn sphere_rays(count: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = seeds::rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let n: f64 = v.norm();
        if n > 1e-12 {
            out.push(v / n);
        }
    }
    out
}

/// Synthetic depth scan on the camera's pixel grid. Dropped rays are left
/// out of the result; rays with nothing within range yield `NoReturn`.
pub fn simulate_depth_scan(
    scene: &Scene,
    position: &Vector3<f64>,
    axis: &Vector3<f64>,
    model: &DepthSensorModel,
    noise: &ScanNoise,
    seed: u64,
) -> Vec<Return> {
    let frame = camera_frame(axis);
    let hp = model.h_fov_deg.to_radians() / 2.0;
    let ht = model.v_fov_deg.to_radians() / 2.0;
    let mut rng = seeds::rng(seed);
    let gauss = Normal::new(0.0, noise.range_std.max(0.0)).expect("finite std");
    let frac = |i: usize, n: usize| if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
    let mut out = Vec::with_capacity(model.scan_cols * model.scan_rows);
    for r in 0..model.scan_rows {
        for c in 0..model.scan_cols {
            let pan = -hp + 2.0 * hp * frac(c, model.scan_cols);
            let tilt = -ht + 2.0 * ht * frac(r, model.scan_rows);
            let d = frustum_direction(&frame, pan, tilt);
            let dropped = rng.random::<f64>() < noise.dropout;
            let eps: f64 = if noise.range_std > 0.0 { gauss.sample(&mut rng) } else { 0.0 };
            let fault = uniform(&mut rng, -model.min_range, model.min_range);
            if dropped {
                continue;
            }
            let t = scene.ray_distance(position, &d);
            if t > model.max_range {
                out.push(Return::NoReturn(d));
                continue;
            }
            let mut range = t + eps;
            if noise.min_range_fault && t < model.min_range {
                range = t + fault;
            }
            out.push(Return::Hit(position + d * range.max(1e-6)));
        }
    }
    out
}
