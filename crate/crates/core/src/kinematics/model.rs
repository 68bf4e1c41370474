use std::collections::HashSet;
use std::path::Path;

use nalgebra::Unit;
use serde::{Deserialize, Serialize};

use super::KinematicsError;
use crate::geometry::{Pose, Rotation, Vec3};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum JointKind {
    Revolute {
        axis: Unit<Vec3>,
        lower: f64,
        upper: f64,
    },
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Transform from the parent link frame to the joint frame at `q = 0`.
    pub origin: Pose,
}

/// Collision capsule in link-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub capsule: Option<Capsule>,
}

/// Serial arm. Link `0` is the base; joint `k` connects link `k` to link `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    joints: Vec<Joint>,
    links: Vec<Link>,
    ee_link: usize,
    finger_axis: Unit<Vec3>,
    base: Pose,
    dof: usize,
    proximity_pairs: Vec<(usize, usize)>,
    reach: f64,
}

impl RobotModel {
    pub fn from_json_str(doc: &str) -> Result<Self, KinematicsError> {
        let raw: RawModel = serde_json::from_str(doc).map_err(|e| KinematicsError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        raw.validate()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&doc)
    }

    /// The bundled UR-class 6-DOF arm.
    pub fn ur_class() -> Self {
        Self::from_json_str(include_str!("../../fixtures/models/ur_class_6dof.json"))
            .expect("bundled model is valid")
    }

    /// Same model with its base link placed at `base`.
    pub fn with_base(mut self, base: Pose) -> Self {
        self.base = base;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn ee_link(&self) -> &str {
        &self.links[self.ee_link].name
    }

    pub(crate) fn ee_link_index(&self) -> usize {
        self.ee_link
    }

    /// Finger direction in the end-effector link frame.
    pub fn finger_axis(&self) -> Unit<Vec3> {
        self.finger_axis
    }

    /// Conservative reach bound: the summed length of every joint offset.
    pub fn reach(&self) -> f64 {
        self.reach
    }

    /// Link pairs whose proximity is tracked: every capsule pair that is not
    /// kinematically adjacent and not listed in `ignore_pairs`.
    pub fn proximity_pairs(&self) -> &[(usize, usize)] {
        &self.proximity_pairs
    }

    /// `(lower, upper)` limits of each revolute joint, in order.
    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.joints
            .iter()
            .filter_map(|j| match j.kind {
                JointKind::Revolute { lower, upper, .. } => Some((lower, upper)),
                JointKind::Fixed => None,
            })
            .collect()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawModel {
    schema: u32,
    #[serde(default)]
    name: String,
    base_link: String,
    joints: Vec<RawJoint>,
    links: Vec<RawLink>,
    #[serde(default)]
    ignore_pairs: Vec<[String; 2]>,
    end_effector: RawEndEffector,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawJoint {
    name: String,
    #[serde(rename = "type", default = "revolute")]
    kind: String,
    child: String,
    #[serde(default)]
    origin: RawOrigin,
    #[serde(default)]
    axis: Option<[f64; 3]>,
    #[serde(default)]
    limits: Option<[f64; 2]>,
}

fn revolute() -> String {
    "revolute".to_owned()
}

#[derive(Debug, Default, Deserialize, Serialize)]
struct RawOrigin {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

#[derive(Debug, Deserialize, Serialize)]
struct RawLink {
    name: String,
    #[serde(default)]
    capsule: Option<RawCapsule>,
    #[serde(default)]
    radius: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawCapsule {
    a: [f64; 3],
    b: [f64; 3],
}

#[derive(Debug, Deserialize, Serialize)]
struct RawEndEffector {
    link: String,
    finger_axis: [f64; 3],
}

fn invalid(msg: impl Into<String>) -> KinematicsError {
    KinematicsError::InvalidModel(msg.into())
}

impl RawModel {
    fn validate(self) -> Result<RobotModel, KinematicsError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.links.len() != self.joints.len() + 1 {
            return Err(invalid(format!(
                "serial chain needs {} links for {} joints, found {}",
                self.joints.len() + 1,
                self.joints.len(),
                self.links.len()
            )));
        }
        if self.links[0].name != self.base_link {
            return Err(invalid(format!(
                "first link must be the base link `{}`",
                self.base_link
            )));
        }
        let mut seen = HashSet::new();
        for l in &self.links {
            if !seen.insert(l.name.as_str()) {
                return Err(invalid(format!("duplicate link `{}`", l.name)));
            }
        }

        let mut joints = Vec::with_capacity(self.joints.len());
        let mut reach = 0.0;
        for (k, j) in self.joints.iter().enumerate() {
            if j.child != self.links[k + 1].name {
                return Err(invalid(format!(
                    "joint `{}` child `{}` does not match link order (expected `{}`)",
                    j.name,
                    j.child,
                    self.links[k + 1].name
                )));
            }
            let [x, y, z] = j.origin.xyz;
            let [r, p, yaw] = j.origin.rpy;
            if j.origin
                .xyz
                .iter()
                .chain(&j.origin.rpy)
                .any(|v| !v.is_finite())
            {
                return Err(invalid(format!("joint `{}` origin is not finite", j.name)));
            }
            reach += Vec3::new(x, y, z).norm();
            let origin = Pose::from_parts(
                nalgebra::Translation3::new(x, y, z),
                Rotation::from_euler_angles(r, p, yaw),
            );
            let kind = match j.kind.as_str() {
                "revolute" => {
                    let axis = j
                        .axis
                        .ok_or_else(|| invalid(format!("joint `{}` has no axis", j.name)))?;
                    let axis = Unit::try_new(Vec3::from(axis), 1e-12)
                        .ok_or_else(|| invalid(format!("joint `{}` axis is zero", j.name)))?;
                    let [lower, upper] = j
                        .limits
                        .unwrap_or([-std::f64::consts::TAU, std::f64::consts::TAU]);
                    if !(lower < upper) {
                        return Err(invalid(format!(
                            "joint `{}` limits must satisfy lower < upper",
                            j.name
                        )));
                    }
                    JointKind::Revolute { axis, lower, upper }
                }
                "fixed" => JointKind::Fixed,
                other => {
                    return Err(invalid(format!(
                        "joint `{}` has unsupported type `{other}`",
                        j.name
                    )))
                }
            };
            joints.push(Joint {
                name: j.name.clone(),
                kind,
                origin,
            });
        }
        let dof = joints
            .iter()
            .filter(|j| matches!(j.kind, JointKind::Revolute { .. }))
            .count();
        if dof == 0 {
            return Err(invalid("model has no revolute joints"));
        }

        let mut links = Vec::with_capacity(self.links.len());
        for l in &self.links {
            let capsule = match (&l.capsule, l.radius) {
                (Some(c), Some(radius)) => {
                    if !(radius > 0.0) {
                        return Err(invalid(format!("link `{}` radius must be > 0", l.name)));
                    }
                    Some(Capsule {
                        a: Vec3::from(c.a),
                        b: Vec3::from(c.b),
                        radius,
                    })
                }
                (None, None) => None,
                _ => {
                    return Err(invalid(format!(
                        "link `{}` needs both capsule and radius",
                        l.name
                    )))
                }
            };
            links.push(Link {
                name: l.name.clone(),
                capsule,
            });
        }

        let index = |name: &str| {
            links
                .iter()
                .position(|l| l.name == name)
                .ok_or_else(|| invalid(format!("unknown link `{name}`")))
        };
        let ee_link = index(&self.end_effector.link)?;
        let finger_axis = Unit::try_new(Vec3::from(self.end_effector.finger_axis), 1e-12)
            .ok_or_else(|| invalid("finger axis is zero"))?;

        let mut ignored = HashSet::new();
        for [a, b] in &self.ignore_pairs {
            let (a, b) = (index(a)?, index(b)?);
            ignored.insert((a.min(b), a.max(b)));
        }
        let mut proximity_pairs = Vec::new();
        for a in 0..links.len() {
            for b in a + 2..links.len() {
                if links[a].capsule.is_some()
                    && links[b].capsule.is_some()
                    && !ignored.contains(&(a, b))
                {
                    proximity_pairs.push((a, b));
                }
            }
        }

        Ok(RobotModel {
            name: self.name,
            joints,
            links,
            ee_link,
            finger_axis,
            base: Pose::identity(),
            dof,
            proximity_pairs,
            reach,
        })
    }
}
