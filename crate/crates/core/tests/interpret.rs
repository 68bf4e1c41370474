use std::path::PathBuf;

use robocheck_core::critics::{all_critics, run_critics, CriticConfig, Flag, COLLISION};
use robocheck_core::kinematics::RobotModel;
use robocheck_core::program::{
    interpret, parse_program, InterpretError, InterpreterConfig, Trajectory,
};
use robocheck_core::scene::{AttachmentEvent, Scene};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

fn recycling() -> Scene {
    Scene::from_file(fixture("scenes/recycling.json")).unwrap()
}

fn run(src: &str, scene: &Scene) -> Result<Trajectory, InterpretError> {
    let program = parse_program(src).unwrap();
    interpret(
        &program,
        scene,
        &RobotModel::ur_class(),
        &InterpreterConfig::default(),
    )
}

#[test]
fn reduce_speed_stretches_legs() {
    let scene = recycling();
    let fast = run("move_to(0.40, 0.10, 0.30)", &scene).unwrap();
    let slow = run("reduce_speed(50)\nmove_to(0.40, 0.10, 0.30)", &scene).unwrap();
    let (a, b) = (fast.legs[0].duration_ms, slow.legs[0].duration_ms);
    assert!((b / a - 2.0).abs() < 1e-9, "{a} vs {b}");
    assert!(slow.duration_ms() > fast.duration_ms());
}

#[test]
fn samples_are_ordered_and_continuous() {
    let scene = recycling();
    let src = std::fs::read_to_string(fixture("programs/recycling.rc")).unwrap();
    let traj = run(&src, &scene).unwrap();
    let cfg = InterpreterConfig::default();
    // One sample never moves a joint further than the nominal speed allows.
    let step = cfg.omega_nom * cfg.dt_sample_ms as f64 / 1000.0 + 1e-9;
    for w in traj.states.windows(2) {
        assert!(w[1].t_ms > w[0].t_ms);
        assert!(w[0].q.max_abs_diff(&w[1].q) <= step);
    }
    assert_eq!(traj.legs.len(), 12);
}

#[test]
fn grasps_become_attachment_events() {
    let scene = recycling();
    let src = std::fs::read_to_string(fixture("programs/recycling.rc")).unwrap();
    let traj = run(&src, &scene).unwrap();
    let events = &traj.attachment.events;
    assert_eq!(events.len(), 6);
    let objects: Vec<&str> = events.iter().map(|e| e.object()).collect();
    assert_eq!(
        objects,
        ["can_1", "can_1", "can_2", "can_2", "bottle", "bottle"]
    );
    for pair in events.chunks(2) {
        assert!(matches!(pair[0], AttachmentEvent::Attach { .. }));
        assert!(matches!(pair[1], AttachmentEvent::Detach { .. }));
        assert!(pair[1].t_ms() > pair[0].t_ms());
    }
    // Released objects rest inside the bin footprint.
    let bin = scene.object("bin").unwrap();
    if let AttachmentEvent::Detach { pose, .. } = &events[1] {
        let p = pose.translation.vector;
        assert!((p.x - bin.position.x).abs() < bin.scale.x / 2.0);
        assert!((p.y - bin.position.y).abs() < bin.scale.y / 2.0);
    }
}

#[test]
fn closing_on_nothing_attaches_nothing() {
    let traj = run("move_to(0.0, 0.40, 0.30)\nclose_gripper()", &recycling()).unwrap();
    assert!(traj.attachment.is_empty());
    assert!(!traj.states.last().unwrap().gripper_open);
}

#[test]
fn unreachable_target_names_its_line() {
    let err = run(
        "move_to(0.40, 0.0, 0.30)\nmove_to(3.0, 0.0, 0.30)",
        &recycling(),
    )
    .unwrap_err();
    assert_eq!(err.line(), Some(2));
}

#[test]
fn low_pass_collides_with_the_middle_can() {
    let scene = recycling();
    let src = std::fs::read_to_string(fixture("programs/recycling.rc")).unwrap();
    let model = RobotModel::ur_class();
    let cfg = CriticConfig::default();
    let clean = run(&src, &scene).unwrap();
    let reports = run_critics(&clean, &scene, &model, &cfg, &all_critics()).unwrap();
    assert!(reports.iter().all(|r| r.flag == Flag::Ok), "{reports:?}");

    let low = src.replacen(
        "move_to(-0.05, -0.45, 0.40)",
        "move_to(0.45, 0.00, 0.14)\nmove_to(-0.05, -0.45, 0.40)",
        1,
    );
    let traj = run(&low, &scene).unwrap();
    let reports = run_critics(&traj, &scene, &model, &cfg, &all_critics()).unwrap();
    let hit = reports.iter().find(|r| r.critic == COLLISION).unwrap();
    assert_eq!(hit.flag, Flag::Error);
    assert!(hit.explanation.contains("can_2"), "{}", hit.explanation);
}
