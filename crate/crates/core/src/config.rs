//! Experiment configuration (TOML). Every section has full defaults and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, WorkspaceBox};
use crate::error::{Error, Result};
use crate::kinematics::{default_robot, Attachment, Joint, RobotModel, BASE_CENTER, ELBOW, PROBE};
use crate::planner::PlannerParams;
use crate::sensing::{DepthSensorModel, ProbeSensorModel, ScanNoise};
use crate::sim::scene::{Scene, SceneSpec};
use crate::worldmap::OccupancyParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kappa: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub eta: f64,
    pub alpha: f64,
    pub d_safe_base: f64,
    pub d_safe_probe: f64,
    pub line_clearance: f64,
    pub workspace_rows: bool,
    pub workspace_margin: f64,
    pub joint_limit_gain: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let p = ControllerParams::<f64>::default();
        Self {
            kappa: p.kappa,
            lambda_c: p.lambda_c,
            lambda_s: p.lambda_s,
            eta: p.eta,
            alpha: p.alpha,
            d_safe_base: p.d_safe_base,
            d_safe_probe: p.d_safe_probe,
            line_clearance: p.line_clearance,
            workspace_rows: true,
            workspace_margin: p.workspace_margin,
            joint_limit_gain: p.joint_limit_gain,
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

impl ControllerConfig {
    pub fn params(&self, side: f64) -> ControllerParams<f64> {
        ControllerParams {
            kappa: self.kappa,
            lambda_c: self.lambda_c,
            lambda_s: self.lambda_s,
            eta: self.eta,
            alpha: self.alpha,
            d_safe_base: self.d_safe_base,
            d_safe_probe: self.d_safe_probe,
            line_clearance: self.line_clearance,
            workspace: self.workspace_rows.then(|| WorkspaceBox::cube(side)),
            workspace_margin: self.workspace_margin,
            joint_limit_gain: self.joint_limit_gain,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub resolution: f64,
    pub hit: f64,
    pub miss: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    pub p_occ_min: f64,
    pub p_free_max: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        let o = OccupancyParams::default();
        Self {
            resolution: 0.05,
            hit: o.hit,
            miss: o.miss,
            clamp_min: o.clamp_min,
            clamp_max: o.clamp_max,
            p_occ_min: o.p_occ_min,
            p_free_max: o.p_free_max,
        }
    }
}

impl MapConfig {
    pub fn occupancy(&self) -> OccupancyParams {
        OccupancyParams {
            hit: self.hit,
            miss: self.miss,
            clamp_min: self.clamp_min,
            clamp_max: self.clamp_max,
            p_occ_min: self.p_occ_min,
            p_free_max: self.p_free_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub min_points: usize,
    /// Distance to a nominal wall within which a return is attributed to it.
    pub association_threshold: f64,
    /// Fits whose normal deviates further from the nominal wall are rejected.
    pub max_normal_deviation_deg: f64,
    pub robust: bool,
    pub inlier_threshold: f64,
    pub ransac_iterations: usize,
    /// Points kept per wall; later returns are ignored.
    pub max_points: usize,
    /// Standard deviations of the belief used before a wall has been fitted.
    pub prior_normal_std: f64,
    pub prior_offset_std: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            min_points: 10,
            association_threshold: 0.03,
            max_normal_deviation_deg: 10.0,
            robust: false,
            inlier_threshold: 0.02,
            ransac_iterations: 100,
            max_points: 2000,
            prior_normal_std: 0.01,
            prior_offset_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub rate_hz: f64,
    pub scan_every: usize,
    pub max_time_s: f64,
    pub estop_abort_s: f64,
    /// Standard deviation of the perturbation applied to pipe lines handed
    /// to the controller (point in m, direction components).
    pub pipe_perturbation_std: f64,
    pub reach_samples: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            rate_hz: 100.0,
            scan_every: 10,
            max_time_s: 3600.0,
            estop_abort_s: 1.0,
            pipe_perturbation_std: 0.0,
            reach_samples: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub origin: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    pub max_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentSpec {
    pub name: String,
    pub link: usize,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSpec {
    pub mount: [f64; 3],
    pub tool_offset: [f64; 3],
    pub tool_axis: [f64; 3],
    pub base_linear_velocity: f64,
    pub base_angular_velocity: f64,
    pub joints: Vec<JointSpec>,
    pub attachments: Vec<AttachmentSpec>,
}

impl Default for RobotSpec {
    fn default() -> Self {
        let m = default_robot::<f64>();
        Self {
            mount: m.mount.translation.vector.into(),
            tool_offset: m.tool_offset.into(),
            tool_axis: m.tool_axis.into(),
            base_linear_velocity: m.base_linear_velocity,
            base_angular_velocity: m.base_angular_velocity,
            joints: m
                .joints
                .iter()
                .map(|j| JointSpec {
                    name: j.name.clone(),
                    origin: j.origin.into(),
                    rpy: j.rpy.into(),
                    axis: j.axis.into(),
                    lower: j.lower,
                    upper: j.upper,
                    max_velocity: j.max_velocity,
                })
                .collect(),
            attachments: m
                .attachments
                .iter()
                .map(|a| AttachmentSpec {
                    name: a.name.clone(),
                    link: a.link,
                    offset: a.offset.into(),
                })
                .collect(),
        }
    }
}

impl RobotSpec {
    pub fn model(&self) -> Result<RobotModel<f64>> {
        if self.joints.is_empty() {
            return Err(Error::Config("robot needs at least one joint".into()));
        }
        if !(self.base_linear_velocity > 0.0 && self.base_angular_velocity > 0.0) {
            return Err(Error::Config("base velocity limits must be positive".into()));
        }
        let mut joints = Vec::new();
        for j in &self.joints {
            if !(j.max_velocity > 0.0) || !(j.lower < j.upper) || Vector3::from(j.axis).norm() == 0.0 {
                return Err(Error::Config(format!("joint '{}' is malformed", j.name)));
            }
            joints.push(Joint {
                name: j.name.clone(),
                origin: j.origin.into(),
                rpy: j.rpy.into(),
                axis: j.axis.into(),
                lower: j.lower,
                upper: j.upper,
                max_velocity: j.max_velocity,
            });
        }
        let attachments: Vec<Attachment<f64>> = self
            .attachments
            .iter()
            .map(|a| Attachment {
                name: a.name.clone(),
                link: a.link,
                offset: a.offset.into(),
            })
            .collect();
        for name in [BASE_CENTER, PROBE, ELBOW] {
            match attachments.iter().find(|a| a.name == name) {
                Some(a) if a.link <= joints.len() => {}
                _ => return Err(Error::Config(format!("robot attachment '{name}' missing or invalid"))),
            }
        }
        Ok(RobotModel {
            mount: Isometry3::translation(self.mount[0], self.mount[1], self.mount[2]),
            joints,
            tool_offset: self.tool_offset.into(),
            tool_axis: Vector3::from(self.tool_axis).normalize(),
            base_linear_velocity: self.base_linear_velocity,
            base_angular_velocity: self.base_angular_velocity,
            attachments,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<String>,
    /// Scene file, relative to the config file.
    pub scene_file: Option<String>,
    /// Inline scene; mutually exclusive with `scene_file`.
    pub scene: Option<SceneSpec>,
    pub controller: ControllerConfig,
    pub planner: PlannerParams,
    pub map: MapConfig,
    pub depth: DepthSensorModel,
    pub probe: ProbeSensorModel,
    pub noise: ScanNoise,
    pub estimation: EstimationConfig,
    pub sim: SimConfig,
    pub robot: RobotSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, resolving `scene_file` relative to it.
    pub fn load(path: &Path) -> Result<(Self, Scene)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let scene = cfg.resolve_scene(&base)?;
        Ok((cfg, scene))
    }

    pub fn resolve_scene(&self, base_dir: &Path) -> Result<Scene> {
        let spec = match (&self.scene_file, &self.scene) {
            (Some(_), Some(_)) => return Err(Error::Config("give either scene_file or [scene], not both".into())),
            (Some(f), None) => {
                let p: PathBuf = base_dir.join(f);
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Config(format!("cannot read scene {}: {e}", p.display())))?;
                toml::from_str::<SceneSpec>(&text).map_err(|e| Error::Config(format!("scene {}: {e}", p.display())))?
            }
            (None, Some(s)) => s.clone(),
            (None, None) => SceneSpec::default(),
        };
        let scene = Scene::from_spec(&spec)?;
        if scene.start.arm.len() != self.robot.joints.len() {
            return Err(Error::Config("start pose arm length does not match the robot".into()));
        }
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.controller.params(1.5).validate().map_err(wrap)?;
        self.planner.validate().map_err(wrap)?;
        self.map.occupancy().validate().map_err(wrap)?;
        self.depth.validate().map_err(wrap)?;
        self.probe.validate().map_err(wrap)?;
        self.robot.model()?;
        if !(self.map.resolution > 0.0) {
            return Err(Error::Config("map resolution must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.noise.dropout) || !(self.noise.range_std >= 0.0) {
            return Err(Error::Config("noise dropout must be in [0, 1) and range_std >= 0".into()));
        }
        let s = &self.sim;
        if !(s.rate_hz > 0.0) || s.scan_every == 0 || !(s.max_time_s > 0.0) || !(s.estop_abort_s > 0.0) {
            return Err(Error::Config("sim rates and durations must be positive".into()));
        }
        if !(s.pipe_perturbation_std >= 0.0) {
            return Err(Error::Config("pipe perturbation must be non-negative".into()));
        }
        let e = &self.estimation;
        if e.min_points < 3 || e.max_points < e.min_points || !(e.association_threshold > 0.0) {
            return Err(Error::Config("estimation point counts or threshold invalid".into()));
        }
        if !(0.0..90.0).contains(&e.max_normal_deviation_deg) {
            return Err(Error::Config("max_normal_deviation_deg must lie in [0, 90)".into()));
        }
        if !(e.prior_normal_std > 0.0 && e.prior_offset_std > 0.0) {
            return Err(Error::Config("prior standard deviations must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.controller.kappa, 6.0);
        assert_eq!(c.planner.candidates, 500);
        assert_eq!(c.robot.model().unwrap(), default_robot());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[controller]\nkapa = 6.0").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("[controller]\nalpha = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("[planner]\nbeta = -0.1").is_err());
        assert!(ExperimentConfig::from_toml("[sim]\nrate_hz = 0.0").is_err());
    }

    #[test]
    fn roundtrip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
