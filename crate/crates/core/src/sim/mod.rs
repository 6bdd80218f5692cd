//! Closed-loop simulation: ground truth, kinematic integration, sensing,
//! estimation, mapping, planning and control.

pub mod batch;
pub mod chance;
pub mod episode;
pub mod log;
pub mod reach;
pub mod scene;

pub use episode::{run_episode, Termination};
pub use log::{PlanRecord, RunLog, TickRecord};
pub use scene::{Scene, SceneSpec};

use nalgebra::{DVector, Vector3};

use crate::kinematics::{wrap_angle, Configuration, RobotModel};
use crate::worldmap::{VoxelGrid, VoxelIndex, VoxelState};

/// Result of one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub q: Configuration<f64>,
    /// At least one joint was clamped at a position limit.
    pub clamped: bool,
}

/// Zero-order-hold integration over `dt`. The base follows the exact arc of
/// a unicycle whose forward speed is the commanded base velocity projected on
/// the heading.
pub fn step(model: &RobotModel<f64>, q: &Configuration<f64>, u: &DVector<f64>, dt: f64) -> StepOutcome {
    let phi = q.base.phi;
    let v = u[0] * phi.cos() + u[1] * phi.sin();
    let w = u[2];
    let (mut x, mut y) = (q.base.x, q.base.y);
    if w.abs() < 1e-12 {
        x += v * dt * phi.cos();
        y += v * dt * phi.sin();
    } else {
        let r = v / w;
        x += r * ((phi + w * dt).sin() - phi.sin());
        y -= r * ((phi + w * dt).cos() - phi.cos());
    }
    let mut arm = q.arm.clone();
    let mut clamped = false;
    for (k, joint) in model.joints.iter().enumerate() {
        let next = arm[k] + u[3 + k] * dt;
        let c = next.clamp(joint.lower, joint.upper);
        clamped |= c != next;
        arm[k] = c;
    }
    StepOutcome {
        q: Configuration {
            base: crate::kinematics::BasePose {
                x,
                y,
                phi: wrap_angle(phi + w * dt),
            },
            arm,
        },
        clamped,
    }
}

fn chebyshev_adjacent(a: VoxelIndex, b: VoxelIndex) -> bool {
    (0..3).all(|i| a[i].abs_diff(b[i]) <= 1)
}

/// Line of sight from `from` to the center of voxel `v`: no occupied voxel
/// is crossed on the way, except the surface voxels adjacent to `v` that a
/// grazing line passes through.
pub fn line_of_sight(grid: &VoxelGrid, from: &Vector3<f64>, v: VoxelIndex) -> bool {
    let target = grid.center(v);
    let delta = target - from;
    let dist = delta.norm();
    if dist < 1e-12 || grid.voxel_of(from) == Some(v) {
        return true;
    }
    let Ok(trace) = grid.traverse(from, &(delta / dist), dist, false) else {
        return false;
    };
    trace
        .voxels
        .iter()
        .filter(|&&w| w != v)
        .all(|&w| !grid.is_occupied(w) || chebyshev_adjacent(w, v))
}

/// Occupied voxels whose centers lie within `radius` of `p` and are in line
/// of sight. With `uncovered_only`, covered voxels are skipped.
pub fn voxels_in_probe_range(grid: &VoxelGrid, p: &Vector3<f64>, radius: f64, uncovered_only: bool) -> Vec<VoxelIndex> {
    let range = |a: usize| {
        let c = p[a] - grid.origin[a];
        let lo = ((c - radius) / grid.resolution).floor().max(0.0) as i64;
        let hi = (((c + radius) / grid.resolution).floor() as i64).min(grid.dims[a] as i64 - 1);
        lo..=hi
    };
    let mut out = Vec::new();
    for z in range(2) {
        for y in range(1) {
            for x in range(0) {
                let v = [x as usize, y as usize, z as usize];
                if grid.state(v) != VoxelState::Occupied || (uncovered_only && grid.is_covered(v)) {
                    continue;
                }
                if (grid.center(v) - p).norm() <= radius && line_of_sight(grid, p, v) {
                    out.push(v);
                }
            }
        }
    }
    out
}

/// Credits coverage to occupied voxels within the probe sphere.
pub fn mark_probe_coverage(grid: &mut VoxelGrid, probe: &Vector3<f64>, radius: f64) -> usize {
    if grid.voxel_of(probe).is_none() {
        return 0;
    }
    let hits = voxels_in_probe_range(grid, probe, radius, true);
    grid.mark_covered(&hits)
}
