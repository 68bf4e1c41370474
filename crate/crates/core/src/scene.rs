//! Task environment: objects, allowed workspace and grasp attachments.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    pose_from_parts, pose_serde, rotation_from_xyzw, rotation_to_xyzw, vec_to_array, Aabb, Pose,
    Rotation, Vec3,
};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("scene parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scene: {0}")]
    Validation(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: String,
    pub position: Vec3,
    /// Full extents of the oriented box, meters.
    pub scale: Vec3,
    pub orientation: Rotation,
    pub kind: String,
    /// Whether the gripper may pick this object up. Containers set this to false.
    pub graspable: bool,
}

impl SceneObject {
    pub fn pose(&self) -> Pose {
        Pose::from_parts(self.position.into(), self.orientation)
    }

    fn set_pose(&mut self, pose: &Pose) {
        self.position = pose.translation.vector;
        self.orientation = pose.rotation;
    }
}

/// World-frame envelope of an object's oriented box.
pub fn object_aabb(obj: &SceneObject) -> Aabb {
    let half = obj.scale * 0.5;
    let corners = (0..8).map(|i| {
        let local = Vec3::new(
            if i & 1 == 0 { -half.x } else { half.x },
            if i & 2 == 0 { -half.y } else { half.y },
            if i & 4 == 0 { -half.z } else { half.z },
        );
        obj.position + obj.orientation * local
    });
    let corners: Vec<Vec3> = corners.collect();
    Aabb::from_points(&corners).expect("eight corners")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    /// The allowed region all robot motion must stay inside.
    pub workspace: Aabb,
    pub robot_base: Pose,
    /// World direction the finger axis should point for `move_to`.
    pub grasp_direction: Vec3,
}

impl Scene {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn from_json_str(doc: &str) -> Result<Self, SceneError> {
        load_scene(doc)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path)
            .map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))?;
        load_scene(&doc)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SceneDoc::from(self)).expect("scene serializes")
    }

    /// Plain-text listing used in language-model prompts.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let w = &self.workspace;
        out.push_str(&format!(
            "Workspace: x [{:.3}, {:.3}], y [{:.3}, {:.3}], z [{:.3}, {:.3}] (meters)\n",
            w.min.x, w.max.x, w.min.y, w.max.y, w.min.z, w.max.z
        ));
        out.push_str("Objects:\n");
        for o in &self.objects {
            let bb = object_aabb(o);
            out.push_str(&format!(
                "- {} ({}): center ({:.3}, {:.3}, {:.3}), size ({:.3}, {:.3}, {:.3}), top z {:.3}{}\n",
                o.id,
                o.kind,
                o.position.x,
                o.position.y,
                o.position.z,
                o.scale.x,
                o.scale.y,
                o.scale.z,
                bb.max.z,
                if o.graspable { "" } else { ", not graspable" }
            ));
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneDoc {
    schema: u32,
    workspace: BoxDoc,
    #[serde(default)]
    robot_base: Option<BaseDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grasp_direction: Option<[f64; 3]>,
    objects: Vec<ObjectDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxDoc {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct BaseDoc {
    position: [f64; 3],
    #[serde(default = "identity_xyzw")]
    orientation: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectDoc {
    id: String,
    position: [f64; 3],
    scale: [f64; 3],
    #[serde(default = "identity_xyzw")]
    orientation: [f64; 4],
    #[serde(default)]
    kind: String,
    #[serde(default = "yes")]
    graspable: bool,
}

fn identity_xyzw() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

fn yes() -> bool {
    true
}

impl From<&Scene> for SceneDoc {
    fn from(s: &Scene) -> Self {
        SceneDoc {
            schema: SCHEMA_VERSION,
            workspace: BoxDoc {
                min: vec_to_array(&s.workspace.min),
                max: vec_to_array(&s.workspace.max),
            },
            robot_base: Some(BaseDoc {
                position: vec_to_array(&s.robot_base.translation.vector),
                orientation: rotation_to_xyzw(&s.robot_base.rotation),
            }),
            grasp_direction: Some(vec_to_array(&s.grasp_direction)),
            objects: s
                .objects
                .iter()
                .map(|o| ObjectDoc {
                    id: o.id.clone(),
                    position: vec_to_array(&o.position),
                    scale: vec_to_array(&o.scale),
                    orientation: rotation_to_xyzw(&o.orientation),
                    kind: o.kind.clone(),
                    graspable: o.graspable,
                })
                .collect(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> SceneError {
    SceneError::Validation(msg.into())
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Parses and validates a scene document.
pub fn load_scene(doc: &str) -> Result<Scene, SceneError> {
    let raw: SceneDoc = serde_json::from_str(doc).map_err(|e| SceneError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if raw.schema != SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema {} (expected {SCHEMA_VERSION})",
            raw.schema
        )));
    }
    if !finite(&raw.workspace.min) || !finite(&raw.workspace.max) {
        return Err(invalid("workspace bounds must be finite"));
    }
    let (wmin, wmax) = (Vec3::from(raw.workspace.min), Vec3::from(raw.workspace.max));
    if (0..3).any(|k| wmin[k] >= wmax[k]) {
        return Err(invalid(
            "workspace must have positive volume (min < max on every axis)",
        ));
    }
    let workspace = Aabb {
        min: wmin,
        max: wmax,
    };

    let robot_base = match raw.robot_base {
        Some(b) => pose_from_parts(b.position, b.orientation)
            .ok_or_else(|| invalid("robot_base pose is not finite or has a zero quaternion"))?,
        None => Pose::identity(),
    };
    if !workspace.contains(&robot_base.translation.vector, 0.0) {
        return Err(invalid("robot base lies outside the workspace"));
    }

    let grasp_direction = match raw.grasp_direction {
        Some(d) => {
            let v = Vec3::from(d);
            if !finite(&d) || v.norm() < 1e-12 {
                return Err(invalid("grasp_direction must be a finite non-zero vector"));
            }
            v.normalize()
        }
        None => -Vec3::z(),
    };

    let mut ids = HashSet::new();
    let mut objects = Vec::with_capacity(raw.objects.len());
    for o in raw.objects {
        if o.id.is_empty() {
            return Err(invalid("object id must not be empty"));
        }
        if !ids.insert(o.id.clone()) {
            return Err(invalid(format!("duplicate object id `{}`", o.id)));
        }
        if !finite(&o.position) || !finite(&o.scale) {
            return Err(invalid(format!("object `{}` has non-finite values", o.id)));
        }
        if o.scale.iter().any(|&s| s <= 0.0) {
            return Err(invalid(format!(
                "object `{}` must have positive extents",
                o.id
            )));
        }
        let orientation = rotation_from_xyzw(o.orientation)
            .ok_or_else(|| invalid(format!("object `{}` has a zero quaternion", o.id)))?;
        objects.push(SceneObject {
            id: o.id,
            position: Vec3::from(o.position),
            scale: Vec3::from(o.scale),
            orientation,
            kind: o.kind,
            graspable: o.graspable,
        });
    }

    Ok(Scene {
        objects,
        workspace,
        robot_base,
        grasp_direction,
    })
}

/// One grasp or release, stamped with the trajectory time it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AttachmentEvent {
    Attach {
        t_ms: u64,
        object: String,
        /// Object pose relative to the end effector at the closing instant.
        #[serde(with = "pose_serde")]
        offset: Pose,
        /// Start of the approach motion that ended in this grasp.
        approach_start_ms: u64,
    },
    Detach {
        t_ms: u64,
        object: String,
        /// World pose the object comes to rest at.
        #[serde(with = "pose_serde")]
        pose: Pose,
        /// End of the retreat motion following the release.
        retreat_end_ms: u64,
    },
}

impl AttachmentEvent {
    pub fn t_ms(&self) -> u64 {
        match self {
            AttachmentEvent::Attach { t_ms, .. } | AttachmentEvent::Detach { t_ms, .. } => *t_ms,
        }
    }

    pub fn object(&self) -> &str {
        match self {
            AttachmentEvent::Attach { object, .. } | AttachmentEvent::Detach { object, .. } => {
                object
            }
        }
    }
}

/// Grasp timeline of a trajectory. Events alternate attach/detach.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttachmentState {
    pub events: Vec<AttachmentEvent>,
}

impl AttachmentState {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Object held at time `t`, with its grasp offset.
    pub fn held_at(&self, t_ms: u64) -> Option<(&str, &Pose)> {
        match self.events.iter().rev().find(|e| e.t_ms() <= t_ms)? {
            AttachmentEvent::Attach { object, offset, .. } => Some((object, offset)),
            AttachmentEvent::Detach { .. } => None,
        }
    }

    /// Objects in hand contact at `t`: held, being approached for a grasp, or
    /// just released and being retreated from.
    pub fn in_contact_at(&self, t_ms: u64) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        if let Some((id, _)) = self.held_at(t_ms) {
            out.push(id);
        }
        for e in &self.events {
            let hit = match e {
                AttachmentEvent::Attach {
                    t_ms: at,
                    approach_start_ms,
                    ..
                } => (*approach_start_ms..=*at).contains(&t_ms),
                AttachmentEvent::Detach {
                    t_ms: at,
                    retreat_end_ms,
                    ..
                } => (*at..=*retreat_end_ms).contains(&t_ms),
            };
            if hit && !out.contains(&e.object()) {
                out.push(e.object());
            }
        }
        out
    }
}

/// Scene as it looks at time `t`: the held object rides rigidly on the end
/// effector, released objects rest where they were let go, everything else
/// stays at its initial pose.
pub fn apply_attachment(
    scene: &Scene,
    attachment: &AttachmentState,
    t_ms: u64,
    ee_pose: &Pose,
) -> Result<Scene, SceneError> {
    if attachment.is_empty() {
        return Ok(scene.clone());
    }
    let mut rest: HashMap<&str, Pose> = HashMap::new();
    let mut held: Option<(&str, &Pose)> = None;
    for e in attachment.events.iter().take_while(|e| e.t_ms() <= t_ms) {
        if scene.object(e.object()).is_none() {
            return Err(SceneError::UnknownObject(e.object().to_owned()));
        }
        match e {
            AttachmentEvent::Attach { object, offset, .. } => held = Some((object, offset)),
            AttachmentEvent::Detach { object, pose, .. } => {
                rest.insert(object, *pose);
                held = None;
            }
        }
    }
    let mut snapshot = scene.clone();
    for obj in &mut snapshot.objects {
        if let Some((id, offset)) = held {
            if obj.id == id {
                obj.set_pose(&(ee_pose * offset));
                continue;
            }
        }
        if let Some(p) = rest.get(obj.id.as_str()) {
            obj.set_pose(p);
        }
    }
    Ok(snapshot)
}
