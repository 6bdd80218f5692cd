//! Bounded occupancy voxel grid with log-odds updates, voxel bookkeeping and
//! exact ray traversal.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const OBSERVED: u8 = 1;
pub const COVERED: u8 = 2;
pub const RESIDUAL: u8 = 4;

pub type VoxelIndex = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyParams {
    pub hit: f64,
    pub miss: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    pub p_occ_min: f64,
    pub p_free_max: f64,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        Self {
            hit: (0.7f64 / 0.3).ln(),
            miss: -(0.6f64 / 0.4).ln(),
            clamp_min: -2.0,
            clamp_max: 3.5,
            p_occ_min: 0.7,
            p_free_max: 0.3,
        }
    }
}

impl OccupancyParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hit > 0.0
            && self.miss < 0.0
            && self.clamp_min < 0.0
            && self.clamp_max > 0.0
            && 0.0 < self.p_free_max
            && self.p_free_max <= 0.5
            && 0.5 <= self.p_occ_min
            && self.p_occ_min < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("inconsistent occupancy parameters".into()))
        }
    }

    /// Log-odds at and above which an observed voxel counts as occupied.
    pub fn occupied_logodds(&self) -> f64 {
        logit(self.p_occ_min)
    }

    pub fn free_logodds(&self) -> f64 {
        logit(self.p_free_max)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn probability(logodds: f64) -> f64 {
    1.0 / (1.0 + (-logodds).exp())
}

/// Entropy (nats) of a Bernoulli occupancy belief.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VoxelState {
    Unknown,
    Free,
    Occupied,
    Residual,
}

impl VoxelState {
    pub fn as_str(&self) -> &'static str {
        match self {
            VoxelState::Unknown => "unknown",
            VoxelState::Free => "free",
            VoxelState::Occupied => "occupied",
            VoxelState::Residual => "residual",
        }
    }
}

/// Ordered traversal of a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTrace {
    pub voxels: Vec<VoxelIndex>,
    /// The last voxel is occupied and ended the ray.
    pub hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanUpdate {
    pub rays: usize,
    pub free_updates: usize,
    pub occupied_updates: usize,
    pub newly_observed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Census {
    pub unknown: usize,
    pub free: usize,
    pub occupied: usize,
    pub residual: usize,
    pub covered: usize,
    pub mean_entropy: f64,
}

impl Census {
    pub fn total(&self) -> usize {
        self.unknown + self.free + self.occupied + self.residual
    }
}

/// One return of a depth scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Return {
    Hit(Vector3<f64>),
    /// Nothing within range along this unit direction.
    NoReturn(Vector3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    pub params: OccupancyParams,
    logodds: Vec<f64>,
    flags: Vec<u8>,
}

impl VoxelGrid {
    pub fn new(origin: Vector3<f64>, resolution: f64, dims: [usize; 3], params: OccupancyParams) -> Result<Self> {
        if !(resolution > 0.0) || dims.contains(&0) {
            return Err(Error::InvalidParameter("grid needs positive resolution and dims".into()));
        }
        params.validate()?;
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            resolution,
            dims,
            params,
            logodds: vec![0.0; n],
            flags: vec![0; n],
        })
    }

    /// Grid exactly covering the cube `[0, side]³`.
    pub fn cube(side: f64, resolution: f64, params: OccupancyParams) -> Result<Self> {
        let n = (side / resolution).round() as usize;
        if ((n as f64) * resolution - side).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "cube side {side} is not a multiple of resolution {resolution}"
            )));
        }
        Self::new(Vector3::zeros(), resolution, [n, n, n], params)
    }

    pub fn len(&self) -> usize {
        self.logodds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logodds.is_empty()
    }

    pub fn upper(&self) -> Vector3<f64> {
        self.origin
            + Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.resolution
    }

    pub fn linear(&self, idx: VoxelIndex) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    pub fn unlinear(&self, i: usize) -> VoxelIndex {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn contains(&self, idx: [i64; 3]) -> bool {
        (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < self.dims[a])
    }

    fn raw_index(&self, p: &Vector3<f64>) -> [i64; 3] {
        let r = (p - self.origin) / self.resolution;
        [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
    }

    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<VoxelIndex> {
        let r = self.raw_index(p);
        self.contains(r).then(|| [r[0] as usize, r[1] as usize, r[2] as usize])
    }

    pub fn center(&self, idx: VoxelIndex) -> Vector3<f64> {
        self.origin
            + Vector3::new(idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5) * self.resolution
    }

    pub fn logodds(&self, idx: VoxelIndex) -> f64 {
        self.logodds[self.linear(idx)]
    }

    pub fn probability(&self, idx: VoxelIndex) -> f64 {
        probability(self.logodds(idx))
    }

    pub fn flags(&self, idx: VoxelIndex) -> u8 {
        self.flags[self.linear(idx)]
    }

    pub fn is_observed(&self, idx: VoxelIndex) -> bool {
        self.flags(idx) & OBSERVED != 0
    }

    pub fn is_covered(&self, idx: VoxelIndex) -> bool {
        self.flags(idx) & COVERED != 0
    }

    fn state_linear(&self, i: usize) -> VoxelState {
        let f = self.flags[i];
        if f & OBSERVED == 0 {
            if f & RESIDUAL != 0 {
                VoxelState::Residual
            } else {
                VoxelState::Unknown
            }
        } else if self.logodds[i] >= self.params.occupied_logodds() - 1e-12 {
            VoxelState::Occupied
        } else {
            VoxelState::Free
        }
    }

    /// Observed voxels at or above `p_occ_min` are occupied; every other
    /// observed voxel counts as free.
    pub fn state(&self, idx: VoxelIndex) -> VoxelState {
        self.state_linear(self.linear(idx))
    }

    pub fn is_occupied(&self, idx: VoxelIndex) -> bool {
        self.state(idx) == VoxelState::Occupied
    }

    /// Free voxels whose occupancy probability is below `p_free_max`.
    pub fn is_confidently_free(&self, idx: VoxelIndex) -> bool {
        let i = self.linear(idx);
        self.flags[i] & OBSERVED != 0 && self.logodds[i] < self.params.free_logodds()
    }

    /// Applies a log-odds increment, clamped, and marks the voxel observed.
    /// Returns whether the voxel was previously unobserved.
    pub fn update(&mut self, idx: VoxelIndex, delta: f64) -> bool {
        let i = self.linear(idx);
        self.logodds[i] = (self.logodds[i] + delta).clamp(self.params.clamp_min, self.params.clamp_max);
        let fresh = self.flags[i] & OBSERVED == 0;
        self.flags[i] |= OBSERVED;
        self.flags[i] &= !RESIDUAL;
        fresh
    }

    /// Sets the covered flag; returns how many voxels were newly covered.
    pub fn mark_covered(&mut self, ids: &[VoxelIndex]) -> usize {
        let mut count = 0;
        for &idx in ids {
            let i = self.linear(idx);
            if self.flags[i] & COVERED == 0 {
                self.flags[i] |= COVERED;
                count += 1;
            }
        }
        count
    }

    /// Relabels every still-unknown voxel as residual.
    pub fn mark_unknown_residual(&mut self) -> usize {
        let mut count = 0;
        for f in &mut self.flags {
            if *f & (OBSERVED | RESIDUAL) == 0 {
                *f |= RESIDUAL;
                count += 1;
            }
        }
        count
    }

    pub fn indices(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        (0..self.len()).map(|i| self.unlinear(i))
    }

    /// Per-state counts and the mean of occupancy entropy plus coverage
    /// information per voxel. `coverage_info` is the value credited to an
    /// occupied, uncovered voxel.
    pub fn census(&self, coverage_info: f64) -> Census {
        let mut c = Census::default();
        let mut entropy = 0.0;
        for i in 0..self.len() {
            let state = self.state_linear(i);
            match state {
                VoxelState::Unknown => c.unknown += 1,
                VoxelState::Free => c.free += 1,
                VoxelState::Occupied => c.occupied += 1,
                VoxelState::Residual => c.residual += 1,
            }
            let covered = self.flags[i] & COVERED != 0;
            if covered {
                c.covered += 1;
            }
            entropy += bernoulli_entropy(probability(self.logodds[i]));
            if state == VoxelState::Occupied && !covered {
                entropy += coverage_info;
            }
        }
        c.mean_entropy = entropy / self.len() as f64;
        c
    }

    /// Voxels intersected by the half-open segment `[o, o + length·d)` in
    /// order, stopping early at the first occupied voxel when `stop_at_occupied`.
    /// Voxel boundary crossings are evaluated directly from the origin so no
    /// error accumulates; simultaneous crossings step all tied axes at once.
    pub fn traverse(
        &self,
        origin: &Vector3<f64>,
        direction: &Vector3<f64>,
        length: f64,
        stop_at_occupied: bool,
    ) -> Result<RayTrace> {
        let start = self
            .voxel_of(origin)
            .ok_or(Error::OutsideGrid(origin.x, origin.y, origin.z))?;
        let mut idx = [start[0] as i64, start[1] as i64, start[2] as i64];
        let mut step = [0i64; 3];
        let mut next = [f64::INFINITY; 3];
        let crossing = |axis: usize, boundary: i64| {
            (self.origin[axis] + boundary as f64 * self.resolution - origin[axis]) / direction[axis]
        };
        for a in 0..3 {
            if direction[a] > 0.0 {
                step[a] = 1;
                next[a] = crossing(a, idx[a] + 1);
            } else if direction[a] < 0.0 {
                step[a] = -1;
                next[a] = crossing(a, idx[a]);
            }
        }
        let end = length - 1e-9 * self.resolution;
        let mut voxels = Vec::new();
        loop {
            let v = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
            voxels.push(v);
            if stop_at_occupied && self.is_occupied(v) {
                return Ok(RayTrace { voxels, hit: true });
            }
            let t = next[0].min(next[1]).min(next[2]);
            if !(t < end) {
                break;
            }
            for a in 0..3 {
                if next[a] == t {
                    idx[a] += step[a];
                    let b = if step[a] > 0 { idx[a] + 1 } else { idx[a] };
                    next[a] = crossing(a, b);
                }
            }
            if !self.contains(idx) {
                break;
            }
        }
        Ok(RayTrace { voxels, hit: false })
    }

    /// Ray query: traversal up to `max_range`, stopping at the first occupied
    /// voxel (included, `hit = true`).
    pub fn raycast(&self, origin: &Vector3<f64>, direction: &Vector3<f64>, max_range: f64) -> Result<RayTrace> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("ray direction must be unit length".into()));
        }
        self.traverse(origin, direction, max_range, true)
    }

    /// Occupancy update from one scan. Every voxel is updated at most once
    /// per scan, and a voxel that terminates any ray takes the hit update.
    pub fn integrate_depth_scan(
        &mut self,
        sensor: &Vector3<f64>,
        returns: &[Return],
        max_range: f64,
    ) -> Result<ScanUpdate> {
        if self.voxel_of(sensor).is_none() {
            return Err(Error::OutsideGrid(sensor.x, sensor.y, sensor.z));
        }
        let mut occupied = BTreeSet::new();
        let mut free = BTreeSet::new();
        for r in returns {
            match r {
                Return::Hit(p) => {
                    let delta = p - sensor;
                    let dist = delta.norm();
                    if dist <= 0.0 {
                        occupied.insert(self.linear(self.voxel_of(sensor).unwrap()));
                        continue;
                    }
                    let trace = self.traverse(sensor, &(delta / dist), dist, false)?;
                    let (last, rest) = trace.voxels.split_last().expect("trace starts in grid");
                    occupied.insert(self.linear(*last));
                    free.extend(rest.iter().map(|v| self.linear(*v)));
                }
                Return::NoReturn(d) => {
                    let trace = self.traverse(sensor, &d.normalize(), max_range, false)?;
                    free.extend(trace.voxels.iter().map(|v| self.linear(*v)));
                }
            }
        }
        let mut summary = ScanUpdate {
            rays: returns.len(),
            ..ScanUpdate::default()
        };
        let (hit, miss) = (self.params.hit, self.params.miss);
        for &i in &occupied {
            summary.occupied_updates += 1;
            summary.newly_observed += usize::from(self.update(self.unlinear(i), hit));
        }
        for &i in free.difference(&occupied) {
            summary.free_updates += 1;
            summary.newly_observed += usize::from(self.update(self.unlinear(i), miss));
        }
        Ok(summary)
    }

    /// Text snapshot: a header (format tag, origin, resolution, dims) and
    /// one `ix iy iz logodds flags` line per voxel.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "pipescan-grid v1")?;
        writeln!(w, "origin {:?} {:?} {:?}", self.origin.x, self.origin.y, self.origin.z)?;
        writeln!(w, "resolution {:?}", self.resolution)?;
        writeln!(w, "dims {} {} {}", self.dims[0], self.dims[1], self.dims[2])?;
        for i in 0..self.len() {
            let [x, y, z] = self.unlinear(i);
            writeln!(w, "{x} {y} {z} {:?} {}", self.logodds[i], self.flags[i])?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(r: R, params: OccupancyParams) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("grid snapshot: {m}"));
        let mut lines = r.lines();
        let mut next = || -> Result<String> { Ok(lines.next().ok_or_else(|| bad("truncated"))??) };
        if next()? != "pipescan-grid v1" {
            return Err(bad("unknown header"));
        }
        let nums = |line: String, key: &str| -> Result<Vec<f64>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(key));
            }
            it.map(|s| s.parse::<f64>().map_err(|_| bad(key))).collect()
        };
        let o = nums(next()?, "origin")?;
        let res = nums(next()?, "resolution")?;
        let d = nums(next()?, "dims")?;
        if o.len() != 3 || res.len() != 1 || d.len() != 3 {
            return Err(bad("header arity"));
        }
        let mut g = Self::new(
            Vector3::new(o[0], o[1], o[2]),
            res[0],
            [d[0] as usize, d[1] as usize, d[2] as usize],
            params,
        )?;
        for i in 0..g.len() {
            let line = next()?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad("voxel line"));
            }
            g.logodds[i] = f[3].parse().map_err(|_| bad("logodds"))?;
            g.flags[i] = f[4].parse().map_err(|_| bad("flags"))?;
        }
        Ok(g)
    }
}
