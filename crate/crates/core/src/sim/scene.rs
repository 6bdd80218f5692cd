//! Ground-truth geometry: the cube walls and the pipes.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::WorkspaceBox;
use crate::error::{Error, Result};
use crate::kinematics::Configuration;
use crate::primitives::{point_line_distance, Line, Plane};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipeSpec {
    pub point: [f64; 3],
    pub direction: [f64; 3],
    pub radius: f64,
}

impl PipeSpec {
    pub fn line(&self) -> Line<f64> {
        Line::new(Vector3::from(self.point), Vector3::from(self.direction), self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub arm: [f64; 6],
}

impl Default for StartPose {
    fn default() -> Self {
        Self {
            x: 0.75,
            y: 0.75,
            phi: 0.0,
            arm: [0.0, 0.3, 1.2, 0.0, 1.0, 0.0],
        }
    }
}

/// Scene file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_side")]
    pub side: f64,
    #[serde(default)]
    pub pipes: Vec<PipeSpec>,
    #[serde(default)]
    pub start: StartPose,
}

fn default_side() -> f64 {
    1.5
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            side: 1.5,
            pipes: Vec::new(),
            start: StartPose::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub side: f64,
    pub pipes: Vec<Line<f64>>,
    pub start: Configuration<f64>,
}

impl Scene {
    pub fn from_spec(spec: &SceneSpec) -> Result<Self> {
        if !(spec.side > 0.0) {
            return Err(Error::Config("scene side must be positive".into()));
        }
        let mut pipes = Vec::new();
        for (k, p) in spec.pipes.iter().enumerate() {
            let d = Vector3::from(p.direction);
            if !(d.norm() > 0.0) || !(p.radius >= 0.0) {
                return Err(Error::Config(format!("pipe {k} has a zero direction or negative radius")));
            }
            let inside = p.point.iter().all(|c| (0.0..=spec.side).contains(c));
            if !inside {
                return Err(Error::Config(format!("pipe {k} anchor lies outside the cube")));
            }
            pipes.push(p.line());
        }
        let s = &spec.start;
        Ok(Self {
            side: spec.side,
            pipes,
            start: Configuration::new(s.x, s.y, s.phi, DVector::from_row_slice(&s.arm)),
        })
    }

    pub fn workspace(&self) -> WorkspaceBox<f64> {
        WorkspaceBox::cube(self.side)
    }

    /// Inward-facing wall planes: -x, +x, -y, +y, floor, ceiling.
    pub fn walls(&self) -> [Plane<f64>; 6] {
        self.workspace().planes()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.iter().all(|c| *c >= 0.0 && *c <= self.side)
    }

    /// True if `p` is inside the cube and outside every pipe.
    pub fn is_free(&self, p: &Vector3<f64>) -> bool {
        self.contains(p) && self.pipes.iter().all(|l| point_line_distance(p, l) > l.radius)
    }

    /// Distance along unit `d` from `o` (inside the cube) to the first surface.
    pub fn ray_distance(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..3 {
            if d[a] > 0.0 {
                best = best.min((self.side - o[a]) / d[a]);
            } else if d[a] < 0.0 {
                best = best.min(-o[a] / d[a]);
            }
        }
        for l in &self.pipes {
            if let Some(t) = ray_cylinder(o, d, l) {
                best = best.min(t);
            }
        }
        best.max(0.0)
    }
}

/// First positive intersection of a ray with an infinite cylinder.
pub fn ray_cylinder(o: &Vector3<f64>, d: &Vector3<f64>, l: &Line<f64>) -> Option<f64> {
    let w = o - l.point;
    let w_perp = w - l.direction * l.direction.dot(&w);
    let d_perp = d - l.direction * l.direction.dot(d);
    let a = d_perp.norm_squared();
    if a < 1e-18 {
        return None;
    }
    let b = 2.0 * w_perp.dot(&d_perp);
    let c = w_perp.norm_squared() - l.radius * l.radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable roots
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if q != 0.0 { (q / a, c / q) } else { (0.0, 0.0) };
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    if lo > 0.0 {
        Some(lo)
    } else if hi > 0.0 {
        Some(hi)
    } else {
        None
    }
}

/// Randomized scene with `n_pipes` horizontal pipes running 0.2 to 0.3 m
/// from a side wall, clear of the central base region.
pub fn random_scene(n_pipes: usize, seed: u64) -> Scene {
    let mut rng = seeds::derived_rng(seed, &[seeds::stream::SCENE]);
    let side = 1.5;
    let mut pipes = Vec::new();
    for _ in 0..n_pipes {
        let radius = rng.random_range(0.03..0.06);
        let z = rng.random_range(0.35..1.2);
        let offset = rng.random_range(0.2..0.3);
        let wall = rng.random_range(0..4);
        let (point, dir) = match wall {
            0 => (Vector3::new(offset, 0.75, z), Vector3::y()),
            1 => (Vector3::new(side - offset, 0.75, z), Vector3::y()),
            2 => (Vector3::new(0.75, offset, z), Vector3::x()),
            _ => (Vector3::new(0.75, side - offset, z), Vector3::x()),
        };
        pipes.push(Line::new(point, dir, radius));
    }
    Scene {
        side,
        pipes,
        start: {
            let s = StartPose::default();
            Configuration::new(s.x, s.y, s.phi, DVector::from_row_slice(&s.arm))
        },
    }
}
