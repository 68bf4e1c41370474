//! The five built-in critics.

use crate::geometry::{aabb_distance, convex_hull, hull_volume, Aabb, Vec3, GEOM_EPS};
use crate::kinematics::{finger_direction, RobotModel};
use crate::program::{RobotState, Trajectory};
use crate::scene::{apply_attachment, object_aabb, Scene};

use super::{
    CriticConfig, CriticError, CriticReport, Flag, Measurement, COLLISION, EE_POSE, JOINT_SPEED,
    PINCH_POINT, SPACE_USAGE,
};

fn report(
    critic: &str,
    flag: Flag,
    explanation: String,
    fix_hint: String,
    measurement: Measurement,
    cfg: &CriticConfig,
    keys: &[&str],
) -> CriticReport {
    CriticReport {
        critic: critic.to_owned(),
        flag,
        explanation,
        fix_hint,
        measurement: Some(measurement),
        thresholds: cfg.pick(keys),
    }
}

fn measure(
    value: f64,
    unit: &str,
    traj: &Trajectory,
    step: usize,
    subject: Option<String>,
) -> Measurement {
    Measurement {
        value,
        unit: unit.to_owned(),
        t_ms: traj.states.get(step).map_or(0, |s| s.t_ms),
        step,
        subject,
    }
}

/// ` during the move_to on line N`, when the step belongs to a known leg.
fn leg_note(traj: &Trajectory, step: usize) -> String {
    traj.legs
        .iter()
        .find(|l| l.start < step && step <= l.end)
        .map(|l| format!(" during the move_to on line {}", l.line))
        .unwrap_or_default()
}

fn check_monotonic(traj: &Trajectory) -> Result<(), CriticError> {
    match traj.states.windows(2).position(|w| w[1].t_ms <= w[0].t_ms) {
        Some(i) => Err(CriticError::NonMonotonicTimestamps { index: i + 1 }),
        None => Ok(()),
    }
}

fn ee_frame<'a>(
    model: &RobotModel,
    state: &'a RobotState,
) -> Result<&'a crate::geometry::Pose, CriticError> {
    state.frames.get(model.ee_link()).ok_or_else(|| {
        CriticError::Scene(format!(
            "trajectory state at {} ms has no frame for end effector `{}`",
            state.t_ms,
            model.ee_link()
        ))
    })
}

/// Convex hull of every link position (and the held object's box) over the
/// trajectory, compared against the workspace box.
pub fn critic_space_usage(
    traj: &Trajectory,
    scene: &Scene,
    model: &RobotModel,
    cfg: &CriticConfig,
) -> Result<CriticReport, CriticError> {
    const KEYS: &[&str] = &["space_warn_ratio"];
    let ws = &scene.workspace;
    let mut points: Vec<Vec3> = Vec::new();
    // First point outside the workspace: (step, subject, distance outside).
    let mut outside: Option<(usize, String, f64)> = None;
    let mut visit = |step: usize, subject: &str, p: Vec3, points: &mut Vec<Vec3>| {
        if outside.is_none() && !ws.contains(&p, GEOM_EPS) {
            outside = Some((step, subject.to_owned(), ws.distance_to_point(&p)));
        }
        points.push(p);
    };
    for (i, s) in traj.states.iter().enumerate() {
        for (name, pose) in s.frames.iter() {
            visit(i, name, pose.translation.vector, &mut points);
        }
        if let Some((id, _)) = traj.attachment.held_at(s.t_ms) {
            let ee = ee_frame(model, s)?;
            let snap = apply_attachment(scene, &traj.attachment, s.t_ms, ee)
                .map_err(|e| CriticError::Scene(e.to_string()))?;
            if let Some(obj) = snap.object(id) {
                for c in object_aabb(obj).corners() {
                    visit(i, id, c, &mut points);
                }
            }
        }
    }
    let hull = convex_hull(&points);
    let ratio = hull_volume(&hull) / ws.volume();

    if let Some((step, subject, gap)) = outside {
        return Ok(report(
            SPACE_USAGE,
            Flag::Error,
            format!(
                "The robot leaves the allowed workspace: {subject} is {:.3} m outside its boundary{}.",
                gap,
                leg_note(traj, step)
            ),
            "Move the move_to targets of that motion back inside the workspace, or lower approach heights so the arm stays within bounds.".into(),
            measure(gap, "m", traj, step, Some(subject)),
            cfg,
            KEYS,
        ));
    }
    if ratio > cfg.space_warn_ratio {
        return Ok(report(
            SPACE_USAGE,
            Flag::Warning,
            format!(
                "The robot sweeps {:.0}% of the workspace volume, more than the recommended {:.0}%.",
                ratio * 100.0,
                cfg.space_warn_ratio * 100.0
            ),
            "Bring the move_to targets closer together, for example by placing objects nearer to where they are picked.".into(),
            measure(ratio, "ratio", traj, 0, None),
            cfg,
            KEYS,
        ));
    }
    let mut r = CriticReport::ok(
        SPACE_USAGE,
        format!("The robot uses {:.0}% of the workspace.", ratio * 100.0),
    );
    r.measurement = Some(measure(ratio, "ratio", traj, 0, None));
    r.thresholds = cfg.pick(KEYS);
    Ok(r)
}

/// Gripper envelope versus every object not in hand contact, per state.
pub fn critic_collision(
    traj: &Trajectory,
    scene: &Scene,
    model: &RobotModel,
    cfg: &CriticConfig,
) -> Result<CriticReport, CriticError> {
    const KEYS: &[&str] = &["d_warn"];
    let ee_idx = model.ee_link_index();
    let capsule = model.links()[ee_idx].capsule;
    // (distance, step, object)
    let mut worst: Option<(f64, usize, String)> = None;
    for (i, s) in traj.states.iter().enumerate() {
        let ee = ee_frame(model, s)?;
        let gripper = match capsule {
            Some(c) => {
                let ends = [
                    ee.transform_point(&c.a.into()).coords,
                    ee.transform_point(&c.b.into()).coords,
                ];
                Aabb::from_points(&ends)
                    .expect("two points")
                    .inflated(c.radius)
            }
            None => Aabb::new(ee.translation.vector, ee.translation.vector),
        };
        let contact = traj.attachment.in_contact_at(s.t_ms);
        let snap = apply_attachment(scene, &traj.attachment, s.t_ms, ee)
            .map_err(|e| CriticError::Scene(e.to_string()))?;
        for obj in &snap.objects {
            if contact.contains(&obj.id.as_str()) {
                continue;
            }
            let d = aabb_distance(&gripper, &object_aabb(obj));
            if worst.as_ref().is_none_or(|w| d < w.0) {
                worst = Some((d, i, obj.id.clone()));
            }
        }
    }
    let Some((d, step, id)) = worst else {
        let mut r = CriticReport::ok(COLLISION, "There are no objects to collide with.");
        r.thresholds = cfg.pick(KEYS);
        return Ok(r);
    };
    let m = measure(d, "m", traj, step, Some(id.clone()));
    let note = leg_note(traj, step);
    let hint = format!(
        "Call avoid_collision({id}) before the move_to that passes it, or raise that move_to target so the gripper clears {id}."
    );
    if d < 0.0 {
        return Ok(report(
            COLLISION,
            Flag::Error,
            format!(
                "The gripper collides with {id} (overlap {:.3} m){note}.",
                -d
            ),
            hint,
            m,
            cfg,
            KEYS,
        ));
    }
    if d < cfg.d_warn {
        return Ok(report(
            COLLISION,
            Flag::Warning,
            format!(
                "The gripper passes within {:.3} m of {id}{note}, closer than the recommended {} m.",
                d, cfg.d_warn
            ),
            hint,
            m,
            cfg,
            KEYS,
        ));
    }
    let mut r = CriticReport::ok(
        COLLISION,
        format!("The gripper keeps at least {:.3} m from every object.", d),
    );
    r.measurement = Some(m);
    r.thresholds = cfg.pick(KEYS);
    Ok(r)
}

/// Link speed check. Returns `Error` at the first speed above `v_max`; any
/// speed above `v_warn` yields `Warning`.
pub fn critic_joint_speed(
    traj: &Trajectory,
    cfg: &CriticConfig,
) -> Result<CriticReport, CriticError> {
    const KEYS: &[&str] = &["v_warn", "v_max"];
    check_monotonic(traj)?;
    let hint = "To minimize joint speed, you can consider reducing the speed of the robot during [move_to] actions. This potentially increases the cycle time of the program.";
    let mut flag = Flag::Ok;
    let mut peak = (0.0_f64, 0_usize, None::<String>);
    for t in 1..traj.states.len() {
        let (prev, cur) = (&traj.states[t - 1], &traj.states[t]);
        let dt = (cur.t_ms - prev.t_ms) as f64 / 1000.0;
        for (link, pose) in cur.frames.iter() {
            let Some(before) = prev.frames.get(link) else {
                continue;
            };
            let v = (pose.translation.vector - before.translation.vector).norm() / dt;
            if v > cfg.v_max {
                return Ok(report(
                    JOINT_SPEED,
                    Flag::Error,
                    format!(
                        "Joint speed exceeds the maximum allowable value of {} m/s ({link} reaches {:.2} m/s{}).",
                        cfg.v_max,
                        v,
                        leg_note(traj, t)
                    ),
                    hint.into(),
                    measure(v, "m/s", traj, t, Some(link.clone())),
                    cfg,
                    KEYS,
                ));
            }
            if v > cfg.v_warn {
                flag = Flag::Warning;
            }
            if v > peak.0 {
                peak = (v, t, Some(link.clone()));
            }
        }
    }
    let m = measure(peak.0, "m/s", traj, peak.1, peak.2);
    if flag == Flag::Warning {
        return Ok(report(
            JOINT_SPEED,
            Flag::Warning,
            format!(
                "Joint speed is higher than the recommended value of {} m/s.",
                cfg.v_warn
            ),
            hint.into(),
            m,
            cfg,
            KEYS,
        ));
    }
    let mut r = CriticReport::ok(
        JOINT_SPEED,
        format!("Peak link speed is {:.2} m/s.", peak.0),
    );
    r.measurement = Some(m);
    r.thresholds = cfg.pick(KEYS);
    Ok(r)
}

/// Spearing score: end-effector speed times the positive alignment of its
/// motion with the finger direction.
pub fn critic_ee_pose(
    traj: &Trajectory,
    model: &RobotModel,
    cfg: &CriticConfig,
) -> Result<CriticReport, CriticError> {
    const KEYS: &[&str] = &["score_warn", "score_err"];
    check_monotonic(traj)?;
    let mut peak = (0.0_f64, 0_usize);
    for i in 0..traj.states.len().saturating_sub(1) {
        let (a, b) = (&traj.states[i], &traj.states[i + 1]);
        let (pa, pb) = (ee_frame(model, a)?, ee_frame(model, b)?);
        let dp = pb.translation.vector - pa.translation.vector;
        let dist = dp.norm();
        if dist <= 0.0 {
            continue;
        }
        let dt = (b.t_ms - a.t_ms) as f64 / 1000.0;
        let cos = dp.dot(&finger_direction(model, pa)) / dist;
        let ps = dist / dt * cos.max(0.0);
        if ps > peak.0 {
            peak = (ps, i + 1);
        }
    }
    let (ps, step) = peak;
    let m = measure(ps, "m/s", traj, step, Some(model.ee_link().to_owned()));
    let hint = "Approach objects more slowly: add reduce_speed before the move_to that descends onto the object, or approach from the side instead of along the fingers.";
    let flag = if ps >= cfg.score_err {
        Flag::Error
    } else if ps >= cfg.score_warn {
        Flag::Warning
    } else {
        let mut r = CriticReport::ok(EE_POSE, format!("Peak spearing score is {:.2} m/s.", ps));
        r.measurement = Some(m);
        r.thresholds = cfg.pick(KEYS);
        return Ok(r);
    };
    let limit = if flag == Flag::Error {
        cfg.score_err
    } else {
        cfg.score_warn
    };
    Ok(report(
        EE_POSE,
        flag,
        format!(
            "The gripper moves fast along its finger direction (spearing score {:.2} m/s, limit {}){}.",
            ps,
            limit,
            leg_note(traj, step)
        ),
        hint.into(),
        m,
        cfg,
        KEYS,
    ))
}

/// Smallest link-pair clearance over the trajectory.
pub fn critic_pinch_point(traj: &Trajectory, cfg: &CriticConfig) -> CriticReport {
    const KEYS: &[&str] = &["d_min", "d_max"];
    let worst = traj
        .states
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.proximity.iter().map(move |(k, d)| (*d, i, k)))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let Some((d, step, pair)) = worst else {
        let mut r = CriticReport::ok(PINCH_POINT, "No link pairs to check.");
        r.thresholds = cfg.pick(KEYS);
        return r;
    };
    let pair_text = pair.replace('|', " and ");
    let m = measure(d, "m", traj, step, Some(pair.clone()));
    let hint = "Choose move_to targets that keep the arm extended, for example by raising targets close to the base or moving them further out.";
    let flag = if d < cfg.d_min {
        Flag::Error
    } else if d < cfg.d_max {
        Flag::Warning
    } else {
        let mut r = CriticReport::ok(
            PINCH_POINT,
            format!("Links keep at least {:.3} m apart.", d),
        );
        r.measurement = Some(m);
        r.thresholds = cfg.pick(KEYS);
        return r;
    };
    let what = if flag == Flag::Error {
        "a dangerous pinch region"
    } else {
        "a possible pinch point"
    };
    report(
        PINCH_POINT,
        flag,
        format!(
            "Links {pair_text} come within {:.3} m of each other{}, {what}.",
            d,
            leg_note(traj, step)
        ),
        hint.into(),
        m,
        cfg,
        KEYS,
    )
}
