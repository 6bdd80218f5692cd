//! Chance-constrained whole-body velocity control and coverage-first
//! next-best-view planning for a simulated mobile manipulator.
//!
//! The geometric and control layers ([`primitives`], [`kinematics`],
//! [`svfi`], [`qpsolver`], [`controller`]) are generic over the scalar type
//! through [`Real`]. Mapping, sensing, planning and simulation work in `f64`.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
pub mod error;
pub mod estimation;
pub mod kinematics;
pub mod oracle;
pub mod planner;
pub mod primitives;
pub mod qpsolver;
pub mod scalar;
pub mod seeds;
pub mod sensing;
pub mod sim;
pub mod svfi;
pub mod validation;
pub mod worldmap;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Plane32 = primitives::Plane<f32>;
pub type Plane64 = primitives::Plane<f64>;
pub type Line32 = primitives::Line<f32>;
pub type Line64 = primitives::Line<f64>;
pub type Configuration32 = kinematics::Configuration<f32>;
pub type Configuration64 = kinematics::Configuration<f64>;
pub type RobotModel32 = kinematics::RobotModel<f32>;
pub type RobotModel64 = kinematics::RobotModel<f64>;
pub type PlaneBelief32 = svfi::PlaneBelief<f32>;
pub type PlaneBelief64 = svfi::PlaneBelief<f64>;
pub type QProblem32 = qpsolver::QProblem<f32>;
pub type QProblem64 = qpsolver::QProblem<f64>;
pub type Controller32 = controller::Controller<f32>;
pub type Controller64 = controller::Controller<f64>;
