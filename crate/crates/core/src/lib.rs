//! Trajectory verification for pick-and-place robot programs.

// NaN-rejecting checks are written as `!(a < b)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critics;
pub mod geometry;
pub mod kinematics;
pub mod program;
pub mod refine;
pub mod scene;
pub mod settings;

pub use critics::{CriticConfig, CriticReport, Flag, ScoreIndex};
pub use geometry::{Aabb, Pose, Vec3};
pub use kinematics::{JointVector, RobotModel};
pub use program::{RobotProgram, RobotState, Trajectory};
pub use scene::Scene;
pub use settings::Settings;
