//! Kinematic reach mask over the voxel grid and the reachable-surface metric.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::controller::ControllerParams;
use crate::error::Result;
use crate::kinematics::{Configuration, RobotModel, ELBOW, PROBE};
use crate::primitives::{point_line_distance, point_plane_distance};
use crate::seeds;
use crate::sim::scene::Scene;
use crate::sim::line_of_sight;
use crate::worldmap::{VoxelGrid, VoxelIndex, VoxelState};

/// Extra clearance on top of the controller's safety distances, so that a
/// masked set point can be held without pressing on a constraint.
pub const REACH_MARGIN: f64 = 0.05;

/// Marks the voxels that hold the probe for at least one sampled
/// configuration satisfying the controller's distance requirements with
/// respect to the walls and pipes.
pub fn reach_mask(
    grid: &VoxelGrid,
    model: &RobotModel<f64>,
    scene: &Scene,
    params: &ControllerParams<f64>,
    samples: usize,
    seed: u64,
) -> Result<Vec<bool>> {
    let probe = model.attachment(PROBE)?.clone();
    let elbow = model.attachment(ELBOW)?.clone();
    let d_base = params.d_safe_base.max(params.workspace_margin) + REACH_MARGIN;
    let d_probe = params.d_safe_probe + REACH_MARGIN;
    let walls = scene.walls();
    let mut mask = vec![false; grid.len()];
    if 2.0 * d_base >= scene.side {
        return Ok(mask);
    }
    let mut rng = seeds::derived_rng(seed, &[seeds::stream::REACH]);
    for _ in 0..samples {
        let x = rng.random_range(d_base..scene.side - d_base);
        let y = rng.random_range(d_base..scene.side - d_base);
        let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let arm = DVector::from_iterator(
            model.n_arm(),
            model.joints.iter().map(|j| rng.random_range(j.lower..=j.upper)),
        );
        let q = Configuration::new(x, y, phi, arm);
        let chain = model.chain(&q)?;
        let (p, _) = model.attachment_jacobian(&q, &chain, &probe)?;
        let (e, _) = model.attachment_jacobian(&q, &chain, &elbow)?;
        if walls.iter().any(|w| point_plane_distance(&p, w) < d_probe) {
            continue;
        }
        let clear = |pt| {
            scene
                .pipes
                .iter()
                .all(|l| point_line_distance(pt, l) >= l.radius + params.line_clearance + REACH_MARGIN)
        };
        if !(clear(&p) && clear(&e)) {
            continue;
        }
        if let Some(v) = grid.voxel_of(&p) {
            mask[grid.linear(v)] = true;
        }
    }
    Ok(mask)
}

/// Occupied voxels of `grid` within probe range, in line of sight, of the
/// center of some voxel that is both in `mask` and confidently free.
pub fn reachable_occupied(grid: &VoxelGrid, mask: &[bool], radius: f64) -> Vec<VoxelIndex> {
    let stations: Vec<VoxelIndex> = (0..grid.len())
        .filter(|&i| mask[i] && grid.is_confidently_free(grid.unlinear(i)))
        .map(|i| grid.unlinear(i))
        .collect();
    let occupied: Vec<VoxelIndex> = grid.indices().filter(|&v| grid.state(v) == VoxelState::Occupied).collect();
    occupied
        .into_par_iter()
        .filter(|&v| {
            let c = grid.center(v);
            stations.iter().any(|&s| {
                let p = grid.center(s);
                (p - c).norm() <= radius && line_of_sight(grid, &p, v)
            })
        })
        .collect()
}

/// Number of reachable occupied voxels and how many of them are covered.
pub fn coverage_counts(grid: &VoxelGrid, mask: &[bool], radius: f64) -> (usize, usize) {
    let reach = reachable_occupied(grid, mask, radius);
    let covered = reach.iter().filter(|&&v| grid.is_covered(v)).count();
    (reach.len(), covered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::default_robot;
    use crate::sim::scene::SceneSpec;
    use crate::worldmap::OccupancyParams;

    fn setup() -> (VoxelGrid, RobotModel<f64>, Scene, ControllerParams<f64>) {
        let g = VoxelGrid::cube(1.5, 0.05, OccupancyParams::default()).unwrap();
        (g, default_robot(), Scene::from_spec(&SceneSpec::default()).unwrap(), ControllerParams::default())
    }

    #[test]
    fn mask_respects_clearances_and_is_deterministic() {
        let (g, m, s, p) = setup();
        let mask = reach_mask(&g, &m, &s, &p, 20_000, 3).unwrap();
        assert_eq!(mask, reach_mask(&g, &m, &s, &p, 20_000, 3).unwrap());
        let n = mask.iter().filter(|b| **b).count();
        assert!(n > 500, "{n}");
        for (i, _) in mask.iter().enumerate().filter(|(_, b)| **b) {
            let c = g.center(g.unlinear(i));
            // The probe point lies inside the voxel, so its center is within
            // half a diagonal of a valid probe position.
            let slack = 0.05 * 3f64.sqrt() / 2.0;
            for w in s.walls() {
                assert!(point_plane_distance(&c, &w) >= p.d_safe_probe + REACH_MARGIN - slack);
            }
        }
    }

    #[test]
    fn reachable_surface_needs_free_stations() {
        let (mut g, m, s, p) = setup();
        let mask = reach_mask(&g, &m, &s, &p, 5_000, 1).unwrap();
        g.update([15, 15, 0], 3.0);
        assert!(reachable_occupied(&g, &mask, 0.4).is_empty());
        for z in 1..8 {
            g.update([15, 15, z], -2.0);
        }
        let mut full = vec![false; g.len()];
        full[g.linear([15, 15, 4])] = true;
        assert_eq!(reachable_occupied(&g, &full, 0.4), vec![[15, 15, 0]]);
        assert_eq!(coverage_counts(&g, &full, 0.4), (1, 0));
        g.mark_covered(&[[15, 15, 0]]);
        assert_eq!(coverage_counts(&g, &full, 0.4), (1, 1));
    }
}
