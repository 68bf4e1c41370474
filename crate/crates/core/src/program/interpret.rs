use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{Op, RobotProgram};
use super::trace::{Leg, RobotState, Trajectory};
use crate::geometry::{segment_distance, Aabb, Pose, Vec3};
use crate::kinematics::{chain, solve_ik, JointVector, KinematicsError, RobotModel};
use crate::scene::{object_aabb, AttachmentEvent, Scene, SceneObject};

/// Home pose of the bundled arm: gripper pointing down above the table.
pub const UR_CLASS_HOME: [f64; 6] = [0.0, 0.0, 0.9, 1.7, 0.0, 0.5415926535897931];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpreterConfig {
    /// Sampling period, milliseconds.
    pub dt_sample_ms: u64,
    /// Nominal joint speed of the fastest joint in a move, rad/s.
    pub omega_nom: f64,
    /// Max distance from the gripper tip to an object's box for a grasp, m.
    pub grasp_tol: f64,
    /// Height above an avoided object's top for inserted via-points, m.
    pub clearance: f64,
    pub home: JointVector,
    pub initial_gripper_open: bool,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        InterpreterConfig {
            dt_sample_ms: 50,
            omega_nom: 1.0,
            grasp_tol: 0.03,
            clearance: 0.10,
            home: JointVector(UR_CLASS_HOME.to_vec()),
            initial_gripper_open: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpretError {
    #[error("line {line}: move_to({}, {}, {}) is unreachable: {source}", target[0], target[1], target[2])]
    IkUnreachable {
        line: usize,
        target: [f64; 3],
        source: KinematicsError,
    },
    #[error("line {line}: unknown object `{id}`")]
    UnknownObject { line: usize, id: String },
    #[error("program contains no instructions")]
    EmptyProgram,
    #[error("interpreter configuration: {0}")]
    Config(String),
}

impl InterpretError {
    pub fn line(&self) -> Option<usize> {
        match self {
            InterpretError::IkUnreachable { line, .. }
            | InterpretError::UnknownObject { line, .. } => Some(*line),
            _ => None,
        }
    }
}

struct Interp<'a> {
    model: RobotModel,
    scene: &'a Scene,
    cfg: &'a InterpreterConfig,
    traj: Trajectory,
    q: Vec<f64>,
    t_ms: u64,
    gripper_open: bool,
    speed: f64,
    avoid: Vec<String>,
    world: HashMap<String, Pose>,
    held: Option<(String, Pose)>,
    last_move_start_ms: u64,
    pending_retreat: Option<usize>,
}

/// Turns a parsed program into a sampled trajectory.
///
/// Each `move_to` solves IK for the target (finger axis along the scene's grasp
/// direction) and interpolates linearly in joint space over
/// `max|dq| / (omega_nom * speed_factor)` seconds, sampled every
/// `dt_sample_ms`. Gripper commands add one sample with the toggled flag and
/// grasp or release the nearest graspable object.
pub fn interpret(
    program: &RobotProgram,
    scene: &Scene,
    model: &RobotModel,
    cfg: &InterpreterConfig,
) -> Result<Trajectory, InterpretError> {
    if program.instructions.is_empty() {
        return Err(InterpretError::EmptyProgram);
    }
    if cfg.home.len() != model.dof() {
        return Err(InterpretError::Config(format!(
            "home has {} joints, model has {}",
            cfg.home.len(),
            model.dof()
        )));
    }
    if cfg.dt_sample_ms == 0 || !(cfg.omega_nom > 0.0) {
        return Err(InterpretError::Config(
            "dt_sample_ms and omega_nom must be positive".into(),
        ));
    }
    let mut it = Interp {
        model: model.clone().with_base(scene.robot_base),
        scene,
        cfg,
        traj: Trajectory {
            source: Some(program.source.clone()),
            ..Trajectory::default()
        },
        q: cfg.home.0.clone(),
        t_ms: 0,
        gripper_open: cfg.initial_gripper_open,
        speed: 1.0,
        avoid: Vec::new(),
        world: scene
            .objects
            .iter()
            .map(|o| (o.id.clone(), o.pose()))
            .collect(),
        held: None,
        last_move_start_ms: 0,
        pending_retreat: None,
    };
    it.push_state();
    for ins in &program.instructions {
        match &ins.op {
            Op::MoveTo(target) => it.move_to(target, ins.line)?,
            Op::ReduceSpeed(p) => it.speed = p / 100.0,
            Op::AvoidCollision(id) => {
                if scene.object(id).is_none() {
                    return Err(InterpretError::UnknownObject {
                        line: ins.line,
                        id: id.clone(),
                    });
                }
                if !it.avoid.contains(id) {
                    it.avoid.push(id.clone());
                }
            }
            Op::CloseGripper => it.close_gripper(),
            Op::OpenGripper => it.open_gripper(),
        }
    }
    Ok(it.traj)
}

impl Interp<'_> {
    fn ee(&self) -> Pose {
        chain(&self.model, &self.q).links[self.model.ee_link_index()]
    }

    fn push_state(&mut self) {
        let links = chain(&self.model, &self.q).links;
        let mut frames = crate::kinematics::FrameSet::new();
        for (l, p) in self.model.links().iter().zip(&links) {
            frames.insert(l.name.clone(), *p);
        }
        let proximity = proximity(&self.model, &links);
        self.traj.states.push(RobotState {
            t_ms: self.t_ms,
            q: JointVector(self.q.clone()),
            frames,
            proximity,
            gripper_open: self.gripper_open,
        });
    }

    fn object_box(&self, id: &str) -> Option<Aabb> {
        let obj = self.scene.object(id)?;
        let pose = self.world.get(id)?;
        let moved = SceneObject {
            position: pose.translation.vector,
            orientation: pose.rotation,
            ..obj.clone()
        };
        Some(object_aabb(&moved))
    }

    /// Via-points lifting a straight move over every avoided object it would
    /// otherwise pass through below the clearance height.
    fn via_points(&self, from: &Vec3, to: &Vec3) -> Vec<Vec3> {
        let held = self.held.as_ref().map(|(id, _)| id.as_str());
        let mut vias: Vec<(f64, Vec3)> = Vec::new();
        for id in &self.avoid {
            if Some(id.as_str()) == held {
                continue;
            }
            let Some(bb) = self.object_box(id) else {
                continue;
            };
            let Some((t0, t1)) = clip_xy(from, to, &bb) else {
                continue;
            };
            let safe_z = bb.max.z + self.cfg.clearance;
            let z_at = |t: f64| from.z + (to.z - from.z) * t;
            if z_at(t0).min(z_at(t1)) >= safe_z {
                continue;
            }
            let tm = 0.5 * (t0 + t1);
            let mid = from + (to - from) * tm;
            vias.push((tm, Vec3::new(mid.x, mid.y, safe_z)));
        }
        vias.sort_by(|a, b| a.0.total_cmp(&b.0));
        vias.into_iter().map(|(_, p)| p).collect()
    }

    fn move_to(&mut self, target: &Vec3, line: usize) -> Result<(), InterpretError> {
        let start_ms = self.t_ms;
        let from = self.ee().translation.vector;
        let mut waypoints = self.via_points(&from, target);
        waypoints.push(*target);
        for wp in waypoints {
            let goal = self
                .solve(&wp)
                .map_err(|source| InterpretError::IkUnreachable {
                    line,
                    target: [target.x, target.y, target.z],
                    source,
                })?;
            self.interpolate(goal, line);
        }
        self.last_move_start_ms = start_ms;
        if let Some(i) = self.pending_retreat.take() {
            if let AttachmentEvent::Detach { retreat_end_ms, .. } =
                &mut self.traj.attachment.events[i]
            {
                *retreat_end_ms = self.t_ms;
            }
        }
        Ok(())
    }

    /// IK seeded from the current configuration and from home; keeps the
    /// solution with the smaller joint-space span so moves stay on one branch.
    fn solve(&self, target: &Vec3) -> Result<Vec<f64>, KinematicsError> {
        let dir = Some(&self.scene.grasp_direction);
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut last_err = None;
        for seed in [&self.q, &self.cfg.home.0] {
            match solve_ik(&self.model, target, dir, seed) {
                Ok(q) => {
                    let q = unwrap_toward(&self.model, &self.q, q.0);
                    let span = max_span(&self.q, &q);
                    if best.as_ref().is_none_or(|(b, _)| span < *b) {
                        best = Some((span, q));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match best {
            Some((_, q)) => Ok(q),
            None => Err(last_err.expect("at least one seed tried")),
        }
    }

    fn interpolate(&mut self, goal: Vec<f64>, line: usize) {
        let start = self.traj.states.len() - 1;
        let q0 = self.q.clone();
        let span = max_span(&q0, &goal);
        let duration_s = span / (self.cfg.omega_nom * self.speed);
        let steps = if span > 0.0 {
            ((duration_s * 1000.0 / self.cfg.dt_sample_ms as f64) - 1e-9)
                .ceil()
                .max(1.0) as usize
        } else {
            0
        };
        for k in 1..=steps {
            let s = k as f64 / steps as f64;
            self.q = q0.iter().zip(&goal).map(|(a, b)| a + (b - a) * s).collect();
            self.t_ms += self.cfg.dt_sample_ms;
            self.push_state();
        }
        self.q = goal;
        self.traj.legs.push(Leg {
            line,
            start,
            end: self.traj.states.len() - 1,
            duration_ms: duration_s * 1000.0,
        });
    }

    fn close_gripper(&mut self) {
        self.t_ms += self.cfg.dt_sample_ms;
        self.gripper_open = false;
        if self.held.is_none() {
            let ee = self.ee();
            let tip = ee.translation.vector;
            let mut best: Option<(f64, &str)> = None;
            for obj in self.scene.objects.iter().filter(|o| o.graspable) {
                let Some(bb) = self.object_box(&obj.id) else {
                    continue;
                };
                let d = bb.distance_to_point(&tip);
                if d <= self.cfg.grasp_tol && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, &obj.id));
                }
            }
            if let Some((_, id)) = best {
                let id = id.to_owned();
                let offset = ee.inverse() * self.world[&id];
                self.traj.attachment.events.push(AttachmentEvent::Attach {
                    t_ms: self.t_ms,
                    object: id.clone(),
                    offset,
                    approach_start_ms: self.last_move_start_ms,
                });
                self.held = Some((id, offset));
            }
        }
        self.push_state();
    }

    /// Drops a released object straight down onto the highest support under
    /// it: the top of another object, the floor of a container it falls into,
    /// or the table plane `z = 0`.
    fn settle(&self, id: &str, pose: Pose) -> Pose {
        let obj = self.scene.object(id).expect("held objects exist");
        let bb = object_aabb(&SceneObject {
            position: pose.translation.vector,
            orientation: pose.rotation,
            ..obj.clone()
        });
        let center = bb.center();
        let overlaps = |o: &Aabb| (0..2).all(|k| bb.min[k] < o.max[k] && o.min[k] < bb.max[k]);
        let mut support = self.scene.workspace.min.z.max(0.0);
        for other in self.scene.objects.iter().filter(|o| o.id != id) {
            let Some(ob) = self.object_box(&other.id) else {
                continue;
            };
            let h = if other.graspable {
                overlaps(&ob).then_some(ob.max.z)
            } else {
                // Containers catch objects whose center is over their opening.
                let inside = (0..2).all(|k| ob.min[k] <= center[k] && center[k] <= ob.max[k]);
                inside.then_some(ob.min.z)
            };
            if let Some(h) = h.filter(|h| *h <= bb.min.z + 1e-9) {
                support = support.max(h);
            }
        }
        let drop = (bb.min.z - support).max(0.0);
        Pose::from_parts(
            (pose.translation.vector - Vec3::new(0.0, 0.0, drop)).into(),
            pose.rotation,
        )
    }

    fn open_gripper(&mut self) {
        self.t_ms += self.cfg.dt_sample_ms;
        self.gripper_open = true;
        if let Some((id, offset)) = self.held.take() {
            let pose = self.settle(&id, self.ee() * offset);
            self.world.insert(id.clone(), pose);
            self.traj.attachment.events.push(AttachmentEvent::Detach {
                t_ms: self.t_ms,
                object: id,
                pose,
                retreat_end_ms: self.t_ms,
            });
            self.pending_retreat = Some(self.traj.attachment.events.len() - 1);
        }
        self.push_state();
    }
}

/// Clearance between every tracked link pair: capsule axis distance minus both
/// radii, floored at zero.
pub fn proximity(model: &RobotModel, links: &[Pose]) -> IndexMap<String, f64> {
    let mut out = IndexMap::new();
    let all = model.links();
    for &(a, b) in model.proximity_pairs() {
        let (ca, cb) = (
            all[a].capsule.expect("tracked links have capsules"),
            all[b].capsule.expect("tracked links have capsules"),
        );
        let (pa, pb) = (&links[a], &links[b]);
        let d = segment_distance(
            &(pa * nalgebra::Point3::from(ca.a)).coords,
            &(pa * nalgebra::Point3::from(ca.b)).coords,
            &(pb * nalgebra::Point3::from(cb.a)).coords,
            &(pb * nalgebra::Point3::from(cb.b)).coords,
        );
        out.insert(
            format!("{}|{}", all[a].name, all[b].name),
            (d - ca.radius - cb.radius).max(0.0),
        );
    }
    out
}

fn max_span(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (y - x).abs())
        .fold(0.0, f64::max)
}

/// Shifts revolute goals by whole turns toward `from` where limits allow.
fn unwrap_toward(model: &RobotModel, from: &[f64], mut goal: Vec<f64>) -> Vec<f64> {
    use std::f64::consts::TAU;
    for ((g, f), (lo, hi)) in goal.iter_mut().zip(from).zip(model.limits()) {
        let shifted = *g - TAU * ((*g - f) / TAU).round();
        if (lo..=hi).contains(&shifted) {
            *g = shifted;
        }
    }
    goal
}

/// Parameter interval where the xy-projection of `from -> to` crosses the
/// box footprint.
fn clip_xy(from: &Vec3, to: &Vec3, bb: &Aabb) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..2 {
        let d = to[k] - from[k];
        if d.abs() < 1e-12 {
            if from[k] < bb.min[k] || from[k] > bb.max[k] {
                return None;
            }
        } else {
            let (mut a, mut b) = ((bb.min[k] - from[k]) / d, (bb.max[k] - from[k]) / d);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}
