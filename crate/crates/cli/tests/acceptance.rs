//! Acceptance checks. Prints one PASS or FAIL line per criterion and exits
//! non-zero if any fails. Every check carries a fixed tolerance and a time limit.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use robocheck_core::critics::*;
use robocheck_core::geometry::{aabb_distance, convex_hull, hull_volume, Aabb, Pose, Vec3};
use robocheck_core::kinematics::{
    ee_pose, jacobian, solve_ik, FrameSet, JointVector, KinematicsError, RobotModel,
};
use robocheck_core::program::{interpret, parse_program, RobotState, Trajectory, UR_CLASS_HOME};
use robocheck_core::refine::{fix_loop, Env, LoopOptions, MemoryStore, MockAdapter, Termination};
use robocheck_core::scene::Scene;
use robocheck_core::settings::Settings;
use robocheck_service::{deploy, read_log, DeployOptions, LogEntry, MockRobot, MockRobotConfig};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(rel)
}

type Check = Result<String, String>;

/// Label, check and time limit in seconds.
type Criterion = (&'static str, fn() -> Check, u64);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

fn state(t_ms: u64, links: &[(&str, Vec3)], proximity: &[(&str, f64)]) -> RobotState {
    let mut frames = FrameSet::new();
    for (name, p) in links {
        frames.insert(*name, Pose::translation(p.x, p.y, p.z));
    }
    RobotState {
        t_ms,
        q: JointVector(vec![0.0; 6]),
        frames,
        proximity: proximity.iter().map(|(k, d)| (k.to_string(), *d)).collect(),
        gripper_open: true,
    }
}

fn traj(states: Vec<RobotState>) -> Trajectory {
    Trajectory {
        states,
        ..Trajectory::default()
    }
}

fn gripper_step(dt_ms: u64, from: Vec3, to: Vec3) -> Trajectory {
    traj(vec![
        state(0, &[("gripper", from)], &[]),
        state(dt_ms, &[("gripper", to)], &[]),
    ])
}

// ---- joint speed against a direct re-statement of the rule ----

fn oracle_speed_flag(t: &Trajectory, v_warn: f64, v_max: f64) -> Flag {
    let mut worst = Flag::Ok;
    for i in 1..t.states.len() {
        let dt = (t.states[i].t_ms - t.states[i - 1].t_ms) as f64 / 1000.0;
        for (name, pose) in t.states[i].frames.iter() {
            let prev = t.states[i - 1].frames.get(name).unwrap().translation.vector;
            let d = pose.translation.vector - prev;
            let speed = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt() / dt;
            if speed > v_max {
                return Flag::Error;
            }
            if speed > v_warn {
                worst = Flag::Warning;
            }
        }
    }
    worst
}

fn joint_speed_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut disagreements = 0;
    let mut seen = [0usize; 3];
    for _ in 0..1000 {
        let n = rng.random_range(10..=200);
        let mut pos = [v(0.0, 0.0, 0.0), v(0.1, 0.0, 0.3), v(0.3, 0.1, 0.4)];
        let mut t_ms = 0;
        let mut states = Vec::with_capacity(n);
        // Typical speed of this trajectory, m/s; keeps all three flags common.
        let pace = rng.random_range(0.05..1.6);
        for _ in 0..n {
            states.push(state(
                t_ms,
                &[("a", pos[0]), ("b", pos[1]), ("gripper", pos[2])],
                &[],
            ));
            let dt = rng.random_range(10..120);
            t_ms += dt;
            let reach = pace * dt as f64 / 1000.0;
            for p in &mut pos {
                *p += v(
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                );
            }
        }
        let t = traj(states);
        let v_warn = rng.random_range(0.2..2.0);
        let cfg = CriticConfig {
            v_warn,
            v_max: v_warn + rng.random_range(0.05..2.0),
            ..CriticConfig::default()
        };
        let got = critic_joint_speed(&t, &cfg)
            .map_err(|e| e.to_string())?
            .flag;
        let want = oracle_speed_flag(&t, cfg.v_warn, cfg.v_max);
        seen[want.points() as usize] += 1;
        if got != want {
            disagreements += 1;
        }
    }
    ensure(disagreements == 0, || {
        format!("{disagreements} disagreements")
    })?;
    ensure(seen.iter().all(|&k| k > 0), || {
        format!("flag mix {seen:?} misses a class")
    })?;
    Ok(format!(
        "1000 trajectories, 0 disagreements (Error {}, Warning {}, OK {})",
        seen[0], seen[1], seen[2]
    ))
}

// ---- score index over every flag combination ----

fn score_combinations() -> Check {
    let flags = [Flag::Ok, Flag::Warning, Flag::Error];
    for code in 0..243usize {
        let mut k = code;
        let reports: Vec<CriticReport> = BUILTIN_CRITICS
            .iter()
            .map(|name| {
                let flag = flags[k % 3];
                k /= 3;
                let mut r = CriticReport::ok(name, "");
                r.flag = flag;
                r
            })
            .collect();
        let ok = reports.iter().filter(|r| r.flag == Flag::Ok).count();
        let warn = reports.iter().filter(|r| r.flag == Flag::Warning).count();
        let got = score_index(&reports).map_err(|e| e.to_string())?.total as usize;
        ensure(got == 2 * ok + warn, || {
            format!("combination {code}: {got} != {}", 2 * ok + warn)
        })?;
    }
    Ok("243 combinations equal 2*OK + Warning".into())
}

// ---- thresholds at their exact boundary values ----

fn pinch(d: f64) -> Trajectory {
    traj(vec![
        state(0, &[], &[("upper_arm_link|gripper", 0.3)]),
        state(50, &[], &[("upper_arm_link|gripper", d)]),
    ])
}

fn boundaries() -> Check {
    let cfg = CriticConfig::default();
    let model = RobotModel::ur_class();
    let o = v(0.0, 0.0, 0.0);
    // Identity frames point the finger axis along +z; 1 s steps make the
    // measured speed equal the displacement exactly.
    let speed =
        |d: f64| critic_joint_speed(&gripper_step(1000, o, v(d, 0.0, 0.0)), &cfg).map(|r| r.flag);
    let spear = |d: f64| {
        critic_ee_pose(&gripper_step(1000, o, v(0.0, 0.0, d)), &model, &cfg).map(|r| r.flag)
    };
    let cases = [
        ("joint speed at v_warn", speed(cfg.v_warn), Flag::Ok),
        ("joint speed at v_max", speed(cfg.v_max), Flag::Warning),
        (
            "joint speed above v_max",
            speed(cfg.v_max + 0.5),
            Flag::Error,
        ),
        (
            "ee pose below score_warn",
            spear(cfg.score_warn / 2.0),
            Flag::Ok,
        ),
        (
            "ee pose at score_warn",
            spear(cfg.score_warn),
            Flag::Warning,
        ),
        ("ee pose at score_err", spear(cfg.score_err), Flag::Error),
        (
            "pinch at d_max",
            Ok(critic_pinch_point(&pinch(cfg.d_max), &cfg).flag),
            Flag::Ok,
        ),
        (
            "pinch at d_min",
            Ok(critic_pinch_point(&pinch(cfg.d_min), &cfg).flag),
            Flag::Warning,
        ),
        (
            "pinch below d_min",
            Ok(critic_pinch_point(&pinch(cfg.d_min - 1e-4), &cfg).flag),
            Flag::Error,
        ),
    ];
    for (name, got, want) in &cases {
        let got = got.as_ref().map_err(|e| format!("{name}: {e}"))?;
        ensure(got == want, || {
            format!("{name}: got {got}, expected {want}")
        })?;
    }
    Ok(format!("{} boundary cases", cases.len()))
}

// ---- geometry ----

fn geometry() -> Check {
    let cube = Aabb::new(v(0.0, 0.0, 0.0), v(1.0, 1.0, 1.0));
    let unit = hull_volume(&convex_hull(&cube.corners()));
    ensure((unit - 1.0).abs() < 1e-9, || {
        format!("unit cube volume {unit}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let pts: Vec<Vec3> = (0..500)
        .map(|_| {
            v(
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.6..0.6),
                rng.random_range(0.0..0.9),
            )
        })
        .collect();
    let hull = convex_hull(&pts);
    let bb = Aabb::from_points(&pts).unwrap();
    let n = 1_000_000;
    let inside = (0..n)
        .filter(|_| {
            let p = v(
                rng.random_range(bb.min.x..bb.max.x),
                rng.random_range(bb.min.y..bb.max.y),
                rng.random_range(bb.min.z..bb.max.z),
            );
            // Inside means behind every facet plane.
            (0..hull.facets().len()).all(|f| {
                let (normal, offset) = hull.facet_plane(f);
                normal.dot(&p) - offset <= 0.0
            })
        })
        .count();
    let estimate = bb.volume() * inside as f64 / n as f64;
    let vol = hull_volume(&hull);
    let rel = (vol - estimate).abs() / estimate;
    ensure(rel < 0.02, || {
        format!("hull volume {vol} vs sampled {estimate}")
    })?;

    let mut asymmetric = 0;
    let mut gap_mismatch = 0;
    for _ in 0..10_000 {
        let mut b = || {
            Aabb::new(
                v(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
                v(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
            )
        };
        let (a, c) = (b(), b());
        let (ac, ca) = (aabb_distance(&a, &c), aabb_distance(&c, &a));
        if ac != ca {
            asymmetric += 1;
        }
        // Separated boxes: Euclidean norm of the per-axis gaps.
        let gaps: Vec<f64> = (0..3)
            .map(|k| (c.min[k] - a.max[k]).max(a.min[k] - c.max[k]).max(0.0))
            .collect();
        if gaps.iter().any(|&g| g > 0.0) {
            let want = gaps.iter().map(|g| g * g).sum::<f64>().sqrt();
            if (ac - want).abs() > 1e-12 {
                gap_mismatch += 1;
            }
        }
    }
    ensure(asymmetric == 0, || format!("{asymmetric} asymmetric pairs"))?;
    ensure(gap_mismatch == 0, || {
        format!("{gap_mismatch} separated pairs off the closed form")
    })?;
    Ok(format!(
        "unit cube {unit:.12}, hull vs 1e6 samples {:.3}%, 10000 symmetric pairs",
        rel * 100.0
    ))
}

// ---- kinematics ----

fn kinematics() -> Check {
    let model = RobotModel::ur_class();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let random_q = |rng: &mut ChaCha8Rng| {
        (0..6)
            .map(|_| rng.random_range(-2.5..2.5))
            .collect::<Vec<f64>>()
    };
    let h = 1e-6;
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let q = random_q(&mut rng);
        let analytic = jacobian(&model, &q).map_err(|e| e.to_string())?;
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in 0..6 {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[i] += h;
            qm[i] -= h;
            let (p, m) = (ee_pose(&model, &qp).unwrap(), ee_pose(&model, &qm).unwrap());
            let lin = (p.translation.vector - m.translation.vector) / (2.0 * h);
            let ang = (p.rotation * m.rotation.inverse()).scaled_axis() / (2.0 * h);
            for r in 0..6 {
                let numeric = if r < 3 { lin[r] } else { ang[r - 3] };
                diff += (analytic[(r, i)] - numeric).powi(2);
                norm += analytic[(r, i)].powi(2);
            }
        }
        let rel = (diff / norm).sqrt();
        worst_rel = worst_rel.max(rel);
        ensure(rel < 1e-4, || {
            format!("Jacobian relative error {rel} at {q:?}")
        })?;
    }

    let mut worst_ik: f64 = 0.0;
    for _ in 0..100 {
        let target = ee_pose(&model, &random_q(&mut rng))
            .unwrap()
            .translation
            .vector;
        let sol = solve_ik(&model, &target, None, &UR_CLASS_HOME).map_err(|e| e.to_string())?;
        let err = (ee_pose(&model, &sol).unwrap().translation.vector - target).norm();
        worst_ik = worst_ik.max(err);
        ensure(err < 1e-3, || format!("IK error {err} at {target:?}"))?;
    }

    for _ in 0..20 {
        let dir = v(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let target = dir * model.reach() * rng.random_range(1.1..3.0);
        let r = solve_ik(&model, &target, None, &UR_CLASS_HOME);
        ensure(
            matches!(r, Err(KinematicsError::Unreachable { .. })),
            || format!("target {target:?} beyond reach gave {r:?}"),
        )?;
    }
    Ok(format!(
        "Jacobian worst rel {worst_rel:.1e} over 100, IK worst {worst_ik:.1e} m over 100, 20 unreachable"
    ))
}

// ---- fix loop on scripted answers ----

const RECYCLING_TASK: &str = "Put the two cans and the bottle into the recycling bin.";

fn scripted_loop(
    script: &str,
    settings: &Settings,
) -> Result<robocheck_core::refine::LoopResult, String> {
    let scene = Scene::from_file(fixture("scenes/recycling.json")).map_err(|e| e.to_string())?;
    let model = RobotModel::ur_class();
    let env = Env {
        scene: &scene,
        model: &model,
        interpreter: &settings.interpreter,
        critics: &settings.critics,
    };
    let llm = MockAdapter::from_file(fixture(script)).map_err(|e| e.to_string())?;
    fix_loop(
        RECYCLING_TASK,
        &env,
        &llm,
        &MemoryStore::in_memory(),
        &LoopOptions::default(),
    )
    .map_err(|e| e.to_string())
}

fn fix_loop_scripts() -> Check {
    let fast = Settings::from_file(fixture("config/fast.json")).map_err(|e| e.to_string())?;
    let improving = scripted_loop("scripts/recycling_improving.json", &fast)?;
    let scores = improving.scores();
    ensure(improving.attempt_count() <= 5, || {
        format!("{} attempts", improving.attempt_count())
    })?;
    ensure(scores.windows(2).all(|w| w[1] >= w[0]), || {
        format!("scores {scores:?} decrease")
    })?;
    ensure(improving.termination == Termination::AllOk, || {
        format!("improving script ended {:?}", improving.termination)
    })?;

    let stagnant = scripted_loop("scripts/recycling_stagnant.json", &Settings::default())?;
    ensure(
        stagnant.termination == Termination::Unchanged && stagnant.attempt_count() == 2,
        || {
            format!(
                "stagnant script ended {:?} after {}",
                stagnant.termination,
                stagnant.attempt_count()
            )
        },
    )?;
    Ok(format!(
        "improving {scores:?} AllOk, stagnant Unchanged at attempt 2"
    ))
}

// ---- ablation over the scripted task set ----

fn ablation() -> Check {
    let tasks = fixture("ablation/tasks.json");
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = robocheck_cli::run(
        [
            "robocheck",
            "ablate",
            tasks.to_str().unwrap(),
            "--format",
            "json",
        ],
        &mut out,
        &mut err,
    );
    ensure(code == 0, || {
        format!("exit {code}: {}", String::from_utf8_lossy(&err))
    })?;
    let doc: Value = serde_json::from_slice(&out).map_err(|e| e.to_string())?;
    let rows = doc["rows"].as_array().ok_or("no rows")?;
    ensure(rows.len() == 3, || format!("{} rows", rows.len()))?;
    let mut unresolved = 0;
    let mut summary = Vec::new();
    for row in rows {
        let task = row["task"].as_str().unwrap_or("?");
        let ext = row["external"]["final_score"].as_u64().unwrap_or(0);
        let emb = row["embedded"]["final_score"].as_u64().unwrap_or(0);
        ensure(ext >= emb, || {
            format!("{task}: external {ext} < embedded {emb}")
        })?;
        unresolved += row["embedded"]["unresolved"].as_array().map_or(0, Vec::len);
        summary.push(format!("{task} {emb}/{ext}"));
    }
    ensure(unresolved > 0, || {
        "embedded mode resolved everything".into()
    })?;
    Ok(format!(
        "embedded/external {}; {unresolved} unresolved in embedded mode",
        summary.join(", ")
    ))
}

// ---- deploy gate against the stand-in robot ----

const LOW_PASS: &str = "move_to(0.45, 0.00, 0.14)";

fn recycling_source() -> String {
    std::fs::read_to_string(fixture("programs/recycling.rc")).unwrap()
}

/// Recycling program with a random speed and an extra hover waypoint; `seed_error`
/// adds a pass through the middle can on the way to the bin.
fn variant(rng: &mut ChaCha8Rng, seed_error: bool) -> String {
    let mut src = format!(
        "reduce_speed({})\nmove_to({:.3}, {:.3}, {:.3})\n{}",
        rng.random_range(40..=100),
        rng.random_range(0.30..0.45),
        rng.random_range(-0.15..0.15),
        rng.random_range(0.36..0.45),
        recycling_source()
    );
    if seed_error {
        src = src.replacen(
            "move_to(-0.05, -0.45, 0.40)",
            &format!("{LOW_PASS}\nmove_to(-0.05, -0.45, 0.40)"),
            1,
        );
    }
    src
}

fn audit(
    src: &str,
    scene: &Scene,
    model: &RobotModel,
) -> Result<(Trajectory, Vec<CriticReport>), String> {
    let program = parse_program(src).map_err(|e| e.to_string())?;
    let traj = interpret(&program, scene, model, &Default::default()).map_err(|e| e.to_string())?;
    let reports = run_critics(
        &traj,
        scene,
        model,
        &CriticConfig::default(),
        &all_critics(),
    )
    .map_err(|e| e.to_string())?;
    Ok((traj, reports))
}

fn deploy_gate() -> Check {
    let scene = Scene::from_file(fixture("scenes/recycling.json")).map_err(|e| e.to_string())?;
    let model = RobotModel::ur_class();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("robot.jsonl");
    let robot = MockRobot::bind(
        "127.0.0.1:0",
        MockRobotConfig {
            log_path: Some(log.clone()),
            ..MockRobotConfig::default()
        },
    )
    .map_err(|e| e.to_string())?
    .spawn()
    .map_err(|e| e.to_string())?;
    let addr = robot.addr().to_string();

    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut sent = Vec::new();
    let mut refused = 0;
    for i in 0..50 {
        let seeded = i % 2 == 1;
        let (traj, reports) = audit(&variant(&mut rng, seeded), &scene, &model)?;
        let has_error = worst_flag(&reports) == Flag::Error;
        ensure(!seeded || has_error, || {
            format!("trajectory {i}: seeded collision was not flagged")
        })?;
        match deploy(&traj, &reports, &addr, &DeployOptions::default()) {
            Ok(o) => {
                ensure(!has_error, || {
                    format!("trajectory {i}: Error-flagged trajectory was sent")
                })?;
                ensure(o.frames_sent == traj.states.len(), || {
                    format!(
                        "trajectory {i}: {} of {} frames acked",
                        o.frames_sent,
                        traj.states.len()
                    )
                })?;
                sent.push(traj.states.len());
            }
            Err(robocheck_service::DeployError::Refused { .. }) if has_error => refused += 1,
            Err(e) => return Err(format!("trajectory {i}: {e}")),
        }
    }
    ensure(refused == 25 && sent.len() == 25, || {
        format!("{} sent, {refused} refused", sent.len())
    })?;
    // Stopping the robot flushes the log and adds one empty wake-up connection.
    drop(robot);
    let entries = read_log(&log).map_err(|e| e.to_string())?;
    let last_conn = entries.iter().map(LogEntry::conn).max().unwrap_or(0);
    let mut ends = Vec::new();
    for conn in 1..last_conn {
        let times: Vec<u64> = entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Frame { conn: c, frame } if *c == conn => Some(frame.t_ms),
                _ => None,
            })
            .collect();
        ensure(times.windows(2).all(|w| w[1] > w[0]), || {
            format!("connection {conn}: t_ms not increasing")
        })?;
        match entries
            .iter()
            .find(|e| e.conn() == conn && !matches!(e, LogEntry::Frame { .. }))
        {
            Some(LogEntry::End { frames, .. }) if *frames == times.len() => ends.push(*frames),
            other => return Err(format!("connection {conn} ended with {other:?}")),
        }
    }
    ensure(ends == sent, || {
        format!("robot logged {ends:?}, client sent {sent:?}")
    })?;
    Ok(format!(
        "25 clean sent ({} frames, all acked, monotone), 25 seeded refused",
        sent.iter().sum::<usize>()
    ))
}

// ---- recycling program end to end ----

fn recycling_end_to_end() -> Check {
    let scene = Scene::from_file(fixture("scenes/recycling.json")).map_err(|e| e.to_string())?;
    let model = RobotModel::ur_class();
    let (_, clean) = audit(&recycling_source(), &scene, &model)?;
    let collision = |reports: &[CriticReport]| {
        reports
            .iter()
            .find(|r| r.critic == COLLISION)
            .cloned()
            .unwrap()
    };
    ensure(collision(&clean).flag == Flag::Ok, || {
        format!("clean run: {:?}", collision(&clean))
    })?;
    let low = recycling_source().replacen(
        "move_to(-0.05, -0.45, 0.40)",
        &format!("{LOW_PASS}\nmove_to(-0.05, -0.45, 0.40)"),
        1,
    );
    let (_, flagged) = audit(&low, &scene, &model)?;
    let hit = collision(&flagged);
    let subject = hit.measurement.as_ref().and_then(|m| m.subject.clone());
    ensure(
        hit.flag == Flag::Error && subject.as_deref() == Some("can_2"),
        || format!("low pass: {} on {subject:?}", hit.flag),
    )?;
    let total = score_index(&clean).map_err(|e| e.to_string())?.total;
    Ok(format!(
        "no IK failure, score {total}/10, low pass flips collision to Error on can_2"
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("joint speed matches oracle", joint_speed_oracle, 5),
        ("score index", score_combinations, 1),
        ("threshold boundaries", boundaries, 1),
        ("geometry", geometry, 30),
        ("kinematics", kinematics, 10),
        ("fix loop", fix_loop_scripts, 5),
        ("embedded vs external ablation", ablation, 30),
        ("deploy gate", deploy_gate, 20),
        ("recycling end to end", recycling_end_to_end, 10),
    ];
    let mut failed = 0;
    for (k, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took <= Duration::from_secs(*limit) {
                Ok(msg)
            } else {
                Err(format!("{msg}; over the {limit} s limit"))
            }
        });
        let (tag, msg) = match outcome {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        println!(
            "{tag} {:>2} {name}: {msg} [{:.2} s / {limit} s]",
            k + 1,
            took.as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
