//! Differential kinematics of a planar nonholonomic base carrying a serial arm.
//!
//! The configuration vector is `[x, y, phi, q_1 .. q_k]`. Joint frames follow
//! the URDF convention: each joint has a fixed origin (translation, then
//! roll-pitch-yaw) in its parent frame and rotates about a unit axis expressed
//! in its own frame.

use nalgebra::{
    DVector, Isometry3, Matrix3, Matrix3xX, Matrix6xX, Rotation3, Translation3, Unit, UnitQuaternion,
    Vector3,
};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle<T: Real>(angle: T) -> T {
    let two_pi = T::two_pi();
    let mut a = angle % two_pi;
    if a <= -T::pi() {
        a += two_pi;
    } else if a > T::pi() {
        a -= two_pi;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePose<T: Real = f64> {
    pub x: T,
    pub y: T,
    pub phi: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Configuration<T: Real = f64> {
    pub base: BasePose<T>,
    pub arm: DVector<T>,
}

impl<T: Real> Configuration<T> {
    pub fn new(x: T, y: T, phi: T, arm: DVector<T>) -> Self {
        Self {
            base: BasePose {
                x,
                y,
                phi: wrap_angle(phi),
            },
            arm,
        }
    }

    pub fn dim(&self) -> usize {
        3 + self.arm.len()
    }

    /// Stacked vector `[x, y, phi, arm..]`.
    pub fn to_vector(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.base.x;
        v[1] = self.base.y;
        v[2] = self.base.phi;
        v.rows_mut(3, self.arm.len()).copy_from(&self.arm);
        v
    }

    pub fn from_vector(v: &DVector<T>) -> Self {
        Self::new(v[0], v[1], v[2], v.rows(3, v.len() - 3).into_owned())
    }
}

/// End-effector position and unit direction axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskVector<T: Real = f64> {
    pub position: Vector3<T>,
    pub direction: Vector3<T>,
}

impl<T: Real> TaskVector<T> {
    pub fn new(position: Vector3<T>, direction: Vector3<T>) -> Self {
        Self {
            position,
            direction: direction.normalize(),
        }
    }

    /// Stacked 6-vector `[t; n]`.
    pub fn stacked(&self) -> nalgebra::Vector6<T> {
        let mut v = nalgebra::Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.direction);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint<T: Real = f64> {
    pub name: String,
    pub origin: Vector3<T>,
    pub rpy: Vector3<T>,
    pub axis: Vector3<T>,
    pub lower: T,
    pub upper: T,
    pub max_velocity: T,
}

/// A point rigidly attached to a link. Link 0 is the base frame, link `k` is
/// the frame of arm joint `k` (1-based) after its rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Attachment<T: Real = f64> {
    pub name: String,
    pub link: usize,
    pub offset: Vector3<T>,
}

pub const BASE_CENTER: &str = "base_center";
pub const PROBE: &str = "probe";
pub const ELBOW: &str = "elbow";

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel<T: Real = f64> {
    /// Base frame to arm root.
    pub mount: Isometry3<T>,
    pub joints: Vec<Joint<T>>,
    /// Tool point in the last joint frame.
    pub tool_offset: Vector3<T>,
    /// Tool direction axis in the last joint frame.
    pub tool_axis: Vector3<T>,
    /// Limits on |ẋ|, |ẏ| (m/s) and |φ̇| (rad/s).
    pub base_linear_velocity: T,
    pub base_angular_velocity: T,
    pub attachments: Vec<Attachment<T>>,
}

/// World-frame kinematic state of every arm joint plus the tool.
#[derive(Debug, Clone)]
pub struct ChainState<T: Real> {
    pub base: Isometry3<T>,
    /// World pose of each joint frame, after the joint rotation.
    pub frames: Vec<Isometry3<T>>,
    /// World rotation axis of each joint.
    pub axes: Vec<Vector3<T>>,
    pub tool: TaskVector<T>,
}

fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

impl<T: Real> RobotModel<T> {
    pub fn n_arm(&self) -> usize {
        self.joints.len()
    }

    pub fn dim(&self) -> usize {
        3 + self.joints.len()
    }

    /// Velocity bound for each configuration coordinate.
    pub fn velocity_limits(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.base_linear_velocity;
        v[1] = self.base_linear_velocity;
        v[2] = self.base_angular_velocity;
        for (i, j) in self.joints.iter().enumerate() {
            v[3 + i] = j.max_velocity;
        }
        v
    }

    pub fn attachment(&self, name: &str) -> Result<&Attachment<T>> {
        self.attachments
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttachment(name.to_string()))
    }

    fn check_dim(&self, q: &Configuration<T>) -> Result<()> {
        if q.arm.len() != self.n_arm() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: q.dim(),
            });
        }
        Ok(())
    }

    pub fn chain(&self, q: &Configuration<T>) -> Result<ChainState<T>> {
        self.check_dim(q)?;
        let base = Isometry3::from_parts(
            Translation3::new(q.base.x, q.base.y, T::zero()),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q.base.phi),
        );
        let mut current = base * self.mount;
        let mut frames = Vec::with_capacity(self.n_arm());
        let mut axes = Vec::with_capacity(self.n_arm());
        for (joint, &angle) in self.joints.iter().zip(q.arm.iter()) {
            let fixed = Isometry3::from_parts(
                Translation3::from(joint.origin),
                UnitQuaternion::from_euler_angles(joint.rpy.x, joint.rpy.y, joint.rpy.z),
            );
            current *= fixed;
            let axis = Unit::new_normalize(joint.axis);
            axes.push(current.rotation * axis.into_inner());
            current *= Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&axis, angle),
            );
            frames.push(current);
        }
        let last = frames.last().copied().unwrap_or(base * self.mount);
        let tool = TaskVector::new(
            last.transform_point(&self.tool_offset.into()).coords,
            last.rotation * self.tool_axis,
        );
        Ok(ChainState {
            base,
            frames,
            axes,
            tool,
        })
    }

    pub fn forward_kinematics(&self, q: &Configuration<T>) -> Result<TaskVector<T>> {
        Ok(self.chain(q)?.tool)
    }

    fn link_frame(&self, chain: &ChainState<T>, link: usize) -> Isometry3<T> {
        if link == 0 {
            chain.base
        } else {
            chain.frames[link - 1]
        }
    }

    /// Translation Jacobian of a world point rigidly attached to `link`.
    fn translation_jacobian(
        &self,
        q: &Configuration<T>,
        chain: &ChainState<T>,
        point: &Vector3<T>,
        link: usize,
    ) -> Matrix3xX<T> {
        let mut jac = Matrix3xX::zeros(self.dim());
        jac[(0, 0)] = T::one();
        jac[(1, 1)] = T::one();
        let from_base = point - Vector3::new(q.base.x, q.base.y, point.z);
        jac.set_column(2, &Vector3::z().cross(&from_base));
        for k in 0..link.min(self.n_arm()) {
            let joint_pos = chain.frames[k].translation.vector;
            jac.set_column(3 + k, &chain.axes[k].cross(&(point - joint_pos)));
        }
        jac
    }

    /// Task Jacobian `[J_t; J_n]` with `J_n = -skew(n_e) J_ω`.
    pub fn task_jacobian(&self, q: &Configuration<T>) -> Result<Matrix6xX<T>> {
        let chain = self.chain(q)?;
        let jac_t = self.translation_jacobian(q, &chain, &chain.tool.position, self.n_arm());
        let mut jac_w = Matrix3xX::zeros(self.dim());
        jac_w[(2, 2)] = T::one();
        for (k, axis) in chain.axes.iter().enumerate() {
            jac_w.set_column(3 + k, axis);
        }
        let jac_n = -skew(&chain.tool.direction) * jac_w;
        let mut jac = Matrix6xX::zeros(self.dim());
        jac.fixed_rows_mut::<3>(0).copy_from(&jac_t);
        jac.fixed_rows_mut::<3>(3).copy_from(&jac_n);
        Ok(jac)
    }

    /// World position and translation Jacobian of a named attachment.
    pub fn point_jacobian(
        &self,
        q: &Configuration<T>,
        attachment: &str,
    ) -> Result<(Vector3<T>, Matrix3xX<T>)> {
        let att = self.attachment(attachment)?.clone();
        let chain = self.chain(q)?;
        self.attachment_jacobian(q, &chain, &att)
    }

    pub fn attachment_jacobian(
        &self,
        q: &Configuration<T>,
        chain: &ChainState<T>,
        att: &Attachment<T>,
    ) -> Result<(Vector3<T>, Matrix3xX<T>)> {
        if att.link > self.n_arm() {
            return Err(Error::UnknownAttachment(att.name.clone()));
        }
        let frame = self.link_frame(chain, att.link);
        let point = frame.transform_point(&att.offset.into()).coords;
        let jac = self.translation_jacobian(q, chain, &point, att.link);
        Ok((point, jac))
    }
}

/// Equality row forbidding lateral base motion: `-sin(φ) ẋ + cos(φ) ẏ = 0`.
pub fn nonholonomic_row<T: Real>(q: &Configuration<T>) -> (DVector<T>, T) {
    let mut row = DVector::zeros(q.dim());
    row[0] = -q.base.phi.sin();
    row[1] = q.base.phi.cos();
    (row, T::zero())
}

/// Six-joint arm used by the default experiment: yaw, shoulder and elbow
/// pitch, forearm roll, wrist pitch and tool roll, on a mast 0.55 m above the
/// floor so the arm reaches both floor and ceiling of the cube. The base
/// center sits 0.15 m above the floor.
pub fn default_robot<T: Real>() -> RobotModel<T> {
    let l = T::lit;
    let v = |x: f64, y: f64, z: f64| Vector3::new(l(x), l(y), l(z));
    let joint = |name: &str, origin: Vector3<T>, axis: Vector3<T>, lim: f64| Joint {
        name: name.to_string(),
        origin,
        rpy: Vector3::zeros(),
        axis,
        lower: l(-lim),
        upper: l(lim),
        max_velocity: l(1.0),
    };
    RobotModel {
        mount: Isometry3::translation(l(0.0), l(0.0), l(0.55)),
        joints: vec![
            joint("yaw", v(0.0, 0.0, 0.0), Vector3::z(), 3.1),
            joint("shoulder", v(0.0, 0.0, 0.1), Vector3::y(), 2.0),
            joint("elbow", v(0.0, 0.0, 0.35), Vector3::y(), 2.6),
            joint("forearm", v(0.0, 0.0, 0.3), Vector3::z(), 3.1),
            joint("wrist", v(0.0, 0.0, 0.0), Vector3::y(), 2.2),
            joint("tool", v(0.0, 0.0, 0.05), Vector3::z(), 3.1),
        ],
        tool_offset: v(0.0, 0.0, 0.1),
        tool_axis: Vector3::z(),
        base_linear_velocity: l(0.4),
        base_angular_velocity: l(1.0),
        attachments: vec![
            Attachment {
                name: BASE_CENTER.into(),
                link: 0,
                offset: v(0.0, 0.0, 0.15),
            },
            Attachment {
                name: PROBE.into(),
                link: 6,
                offset: v(0.0, 0.0, 0.1),
            },
            Attachment {
                name: ELBOW.into(),
                link: 3,
                offset: Vector3::zeros(),
            },
        ],
    }
}

/// Rotation helper used by tests and scene code.
pub fn rotation_z<T: Real>(angle: T) -> Rotation3<T> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle)
}
