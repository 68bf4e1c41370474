use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pose_serde::PoseDoc, Vec3};
use crate::kinematics::{FrameSet, JointVector};
use crate::scene::{AttachmentEvent, AttachmentState};

/// One sample of execution: joint angles, link frames, link-pair proximity
/// and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub t_ms: u64,
    pub q: JointVector,
    pub frames: FrameSet,
    /// Clearance between non-adjacent link capsules, keyed `"link_a|link_b"`.
    pub proximity: IndexMap<String, f64>,
    pub gripper_open: bool,
}

/// One interpolated motion segment produced by a `move_to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    /// Source line of the instruction.
    pub line: usize,
    /// Index of the state the leg starts from.
    pub start: usize,
    /// Index of the last state of the leg.
    pub end: usize,
    /// Unrounded motion duration, milliseconds.
    pub duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<RobotState>,
    pub attachment: AttachmentState,
    pub legs: Vec<Leg>,
    /// Program text this trajectory was interpreted from, if known.
    pub source: Option<String>,
}

impl Trajectory {
    pub fn duration_ms(&self) -> u64 {
        match (self.states.first(), self.states.last()) {
            (Some(a), Some(b)) => b.t_ms - a.t_ms,
            _ => 0,
        }
    }

    /// Index of the state with timestamp `t_ms`, if any.
    pub fn index_at(&self, t_ms: u64) -> Option<usize> {
        self.states.binary_search_by_key(&t_ms, |s| s.t_ms).ok()
    }

    pub fn position(&self, state: usize, link: &str) -> Option<Vec3> {
        self.states.get(state)?.frames.position(link)
    }

    /// JSON-lines interchange document, one state per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.states.iter().enumerate() {
            let events: Vec<&AttachmentEvent> = self
                .attachment
                .events
                .iter()
                .filter(|e| e.t_ms() == s.t_ms)
                .collect();
            let line = StateLine {
                t_ms: s.t_ms,
                q: s.q.0.clone(),
                frames: s
                    .frames
                    .iter()
                    .map(|(k, p)| (k.clone(), PoseDoc::from(p)))
                    .collect(),
                proximity: s.proximity.clone(),
                gripper_open: s.gripper_open,
                events: events.into_iter().cloned().collect(),
                legs: self.legs.iter().filter(|l| l.end == i).cloned().collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("state serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses a JSON-lines trajectory. Blank lines are skipped; errors name the
    /// 1-based line.
    pub fn from_jsonl(doc: &str) -> Result<Self, TraceError> {
        let mut traj = Trajectory::default();
        for (i, text) in doc.lines().enumerate() {
            let line = i + 1;
            if text.trim().is_empty() {
                continue;
            }
            let parsed: StateLine = serde_json::from_str(text).map_err(|e| TraceError {
                line,
                message: e.to_string(),
            })?;
            let mut frames = FrameSet::new();
            for (name, doc) in parsed.frames {
                let pose = doc.to_pose().ok_or_else(|| TraceError {
                    line,
                    message: format!("frame `{name}` has an invalid pose"),
                })?;
                frames.insert(name, pose);
            }
            if let Some((k, d)) = parsed.proximity.iter().find(|(_, d)| !(**d >= 0.0)) {
                return Err(TraceError {
                    line,
                    message: format!("proximity `{k}` must be non-negative, got {d}"),
                });
            }
            traj.attachment.events.extend(parsed.events);
            traj.legs.extend(parsed.legs);
            traj.states.push(RobotState {
                t_ms: parsed.t_ms,
                q: JointVector(parsed.q),
                frames,
                proximity: parsed.proximity,
                gripper_open: parsed.gripper_open,
            });
        }
        Ok(traj)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("trajectory line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
struct StateLine {
    t_ms: u64,
    q: Vec<f64>,
    frames: IndexMap<String, PoseDoc>,
    #[serde(default)]
    proximity: IndexMap<String, f64>,
    gripper_open: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    events: Vec<AttachmentEvent>,
    /// Motion legs ending at this state, so line references survive a round trip.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    legs: Vec<Leg>,
}
