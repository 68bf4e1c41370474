//! Serial-arm kinematics: forward kinematics, geometric Jacobian and
//! damped-least-squares inverse kinematics.

mod ik;
mod model;

use std::ops::{Deref, DerefMut};

use indexmap::IndexMap;
use nalgebra::{Matrix6xX, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};

pub use ik::{solve_ik, solve_ik_with, IkOptions};
pub use model::{Capsule, Joint, JointKind, Link, RobotModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint vector has {got} entries, model has {expected} joints")]
    ModelMismatch { expected: usize, got: usize },
    #[error(
        "target unreachable (best position error {best_position_error:.4} m, \
         best direction error {best_angle_error_deg:.2} deg)"
    )]
    Unreachable {
        best_position_error: f64,
        best_angle_error_deg: f64,
    },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("robot model parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Io(String),
}

/// Joint angles in radians, one per revolute joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }

    /// Largest absolute per-joint difference.
    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for JointVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        JointVector(v)
    }
}

/// World-frame pose of every link, in chain order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameSet(IndexMap<String, Pose>);

impl FrameSet {
    pub fn new() -> Self {
        FrameSet(IndexMap::new())
    }

    pub fn insert(&mut self, link: impl Into<String>, pose: Pose) {
        self.0.insert(link.into(), pose);
    }

    pub fn get(&self, link: &str) -> Option<&Pose> {
        self.0.get(link)
    }

    pub fn get_index(&self, i: usize) -> Option<(&String, &Pose)> {
        self.0.get_index(i)
    }

    pub fn position(&self, link: &str) -> Option<Vec3> {
        self.0.get(link).map(|p| p.translation.vector)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Pose)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_len(model: &RobotModel, q: &[f64]) -> Result<(), KinematicsError> {
    if q.len() != model.dof() {
        return Err(KinematicsError::ModelMismatch {
            expected: model.dof(),
            got: q.len(),
        });
    }
    Ok(())
}

/// World axis and origin of each revolute joint, plus every link pose.
pub(crate) struct ChainState {
    pub links: Vec<Pose>,
    pub axes: Vec<(Vec3, Vec3)>,
}

pub(crate) fn chain(model: &RobotModel, q: &[f64]) -> ChainState {
    let mut links = Vec::with_capacity(model.links().len());
    let mut axes = Vec::with_capacity(model.dof());
    let mut cur = *model.base();
    links.push(cur);
    let mut qi = 0;
    for joint in model.joints() {
        cur *= joint.origin;
        if let JointKind::Revolute { axis, .. } = &joint.kind {
            let world_axis = cur.rotation * axis.into_inner();
            axes.push((world_axis, cur.translation.vector));
            cur *= UnitQuaternion::from_axis_angle(axis, q[qi]);
            qi += 1;
        }
        links.push(cur);
    }
    ChainState { links, axes }
}

/// World pose of every link for joint angles `q`.
pub fn forward_kinematics(model: &RobotModel, q: &[f64]) -> Result<FrameSet, KinematicsError> {
    check_len(model, q)?;
    let state = chain(model, q);
    let mut frames = FrameSet::new();
    for (link, pose) in model.links().iter().zip(state.links) {
        frames.insert(link.name.clone(), pose);
    }
    Ok(frames)
}

/// End-effector pose for joint angles `q`.
pub fn ee_pose(model: &RobotModel, q: &[f64]) -> Result<Pose, KinematicsError> {
    check_len(model, q)?;
    Ok(chain(model, q).links[model.ee_link_index()])
}

/// Geometric Jacobian of the end-effector point: rows 0..3 linear (m/rad),
/// rows 3..6 angular (rad/rad), one column per revolute joint.
pub fn jacobian(model: &RobotModel, q: &[f64]) -> Result<Matrix6xX<f64>, KinematicsError> {
    check_len(model, q)?;
    Ok(jacobian_of(model, &chain(model, q)))
}

pub(crate) fn jacobian_of(model: &RobotModel, state: &ChainState) -> Matrix6xX<f64> {
    let ee = state.links[model.ee_link_index()].translation.vector;
    let mut j = Matrix6xX::zeros(model.dof());
    // joints past the end-effector link do not move it
    let mut qi = 0;
    for (k, joint) in model.joints().iter().enumerate() {
        if let JointKind::Revolute { .. } = joint.kind {
            if k < model.ee_link_index() {
                let (axis, origin) = state.axes[qi];
                let lin = axis.cross(&(ee - origin));
                j.fixed_view_mut::<3, 1>(0, qi).copy_from(&lin);
                j.fixed_view_mut::<3, 1>(3, qi).copy_from(&axis);
            }
            qi += 1;
        }
    }
    j
}

/// World-frame finger direction of the end effector at pose `ee`.
pub fn finger_direction(model: &RobotModel, ee: &Pose) -> Vec3 {
    ee.rotation * model.finger_axis().into_inner()
}
