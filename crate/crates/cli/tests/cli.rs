use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

use robocheck_cli::{exit, run};

fn fixture(rel: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(rel)
        .to_string_lossy()
        .into_owned()
}

struct Outcome {
    code: i32,
    out: String,
    err: String,
}

fn robocheck(args: &[&str]) -> Outcome {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(
        std::iter::once("robocheck").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Outcome {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn json(o: &Outcome) -> Value {
    serde_json::from_str(&o.out).unwrap_or_else(|e| panic!("{e}: {}", o.out))
}

fn script_program(path: &str, i: usize) -> String {
    let doc = std::fs::read_to_string(fixture(path)).unwrap();
    let all: Vec<Value> = serde_json::from_str(&doc).unwrap();
    robocheck_core::refine::extract_program(all[i]["content"].as_str().unwrap()).0
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_writes_trajectory_and_verify_reproduces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("r.jsonl").to_string_lossy().into_owned();
    let scene = fixture("scenes/recycling.json");
    let ran = robocheck(&[
        "run",
        &fixture("programs/recycling.rc"),
        "--scene",
        &scene,
        "--out",
        &traj,
        "--format",
        "json",
    ]);
    assert_eq!(ran.code, exit::OK, "{}", ran.err);
    let ran = json(&ran);
    assert_eq!(ran["score"]["total"], 10);
    assert!(Path::new(&traj).exists());

    let verified = robocheck(&["verify", &traj, "--scene", &scene, "--format", "json"]);
    assert_eq!(verified.code, exit::OK);
    let verified = json(&verified);
    assert_eq!(verified["reports"], ran["reports"]);
    assert_eq!(verified["score"], ran["score"]);
}

#[test]
fn round_trip_keeps_line_references() {
    // A flagged run names the offending move_to; verifying the written file
    // must say the same thing.
    let dir = tempfile::tempdir().unwrap();
    let program = write(
        dir.path(),
        "v1.rc",
        &script_program("scripts/recycling_improving.json", 0),
    );
    let traj = dir.path().join("v1.jsonl").to_string_lossy().into_owned();
    let scene = fixture("scenes/recycling.json");
    let config = fixture("config/fast.json");
    let ran = robocheck(&[
        "run", &program, "--scene", &scene, "--config", &config, "--out", &traj, "--format", "json",
    ]);
    assert_eq!(ran.code, exit::ERROR);
    let ran = json(&ran);
    assert!(ran["reports"].to_string().contains("on line"));
    let verified = robocheck(&[
        "verify", &traj, "--scene", &scene, "--config", &config, "--format", "json",
    ]);
    assert_eq!(verified.code, exit::ERROR);
    assert_eq!(json(&verified)["reports"], ran["reports"]);
}

#[test]
fn one_warning_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(
        dir.path(),
        "v2.rc",
        &script_program("ablation/sorting_external.json", 1),
    );
    let traj = dir.path().join("v2.jsonl").to_string_lossy().into_owned();
    let scene = fixture("scenes/sorting.json");
    let config = fixture("config/fast.json");
    let ran = robocheck(&[
        "run", &program, "--scene", &scene, "--config", &config, "--out", &traj,
    ]);
    assert_eq!(ran.code, exit::WARNING, "{}", ran.out);
    let verified = robocheck(&["verify", &traj, "--scene", &scene, "--config", &config]);
    assert_eq!(verified.code, exit::WARNING);
    assert!(verified.out.contains("score 9/10"), "{}", verified.out);
    assert_eq!(
        verified
            .out
            .lines()
            .filter(|l| l.contains(" Warning "))
            .count(),
        1
    );
}

#[test]
fn malformed_trajectory_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.jsonl");
    let scene = fixture("scenes/recycling.json");
    robocheck(&[
        "run",
        &fixture("programs/recycling.rc"),
        "--scene",
        &scene,
        "--out",
        traj.to_str().unwrap(),
    ]);
    let mut lines: Vec<String> = std::fs::read_to_string(&traj)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[6] = r#"{"t_ms": 300, "q": [0.1, "#.into();
    std::fs::write(&traj, lines.join("\n")).unwrap();
    let out = robocheck(&["verify", traj.to_str().unwrap(), "--scene", &scene]);
    assert_eq!(out.code, exit::DATA);
    assert!(out.err.contains("line 7"), "{}", out.err);
}

#[test]
fn unreachable_target_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(
        dir.path(),
        "far.rc",
        "move_to(0.4, 0.0, 0.3)\n\nmove_to(2.5, 0.0, 0.3)\n",
    );
    let out = robocheck(&[
        "run",
        &program,
        "--scene",
        &fixture("scenes/recycling.json"),
    ]);
    assert_eq!(out.code, exit::IK_UNREACHABLE);
    assert!(out.err.contains("line 3"), "{}", out.err);
}

#[test]
fn syntax_error_exits_sixty_five() {
    let dir = tempfile::tempdir().unwrap();
    let program = write(
        dir.path(),
        "bad.rc",
        "move_to(0.4, 0.0, 0.3)\nfly_to(1, 2, 3)\n",
    );
    let out = robocheck(&[
        "run",
        &program,
        "--scene",
        &fixture("scenes/recycling.json"),
    ]);
    assert_eq!(out.code, exit::DATA);
    assert!(out.err.contains("line 2"), "{}", out.err);
}

#[test]
fn critic_selection_limits_reports() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.jsonl").to_string_lossy().into_owned();
    let out = robocheck(&[
        "run",
        &fixture("programs/recycling.rc"),
        "--scene",
        &fixture("scenes/recycling.json"),
        "--out",
        &traj,
        "--critics",
        "joint_speed,collision",
        "--format",
        "json",
    ]);
    assert_eq!(out.code, exit::OK);
    assert_eq!(json(&out)["reports"].as_array().unwrap().len(), 2);
    let bad = robocheck(&[
        "verify",
        &traj,
        "--scene",
        &fixture("scenes/recycling.json"),
        "--critics",
        "vibes",
    ]);
    assert_eq!(bad.code, exit::USAGE);
}

#[test]
fn missing_input_and_usage_errors() {
    let scene = fixture("scenes/recycling.json");
    assert_eq!(
        robocheck(&["verify", "/nonexistent.jsonl", "--scene", &scene]).code,
        exit::NO_INPUT
    );
    assert_eq!(robocheck(&["run", "x.rc"]).code, exit::USAGE);
    assert_eq!(
        robocheck(&["run", "x.rc", "--scene", &scene, "--format", "yaml"]).code,
        exit::USAGE
    );
}

const TASK: &str = "Put the two cans and the bottle into the recycling bin.";

fn loop_scores(out: &Outcome) -> Vec<u64> {
    json(out)["attempts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["score"]["total"].as_u64().unwrap())
        .collect()
}

#[test]
fn loop_with_improving_script() {
    let args = [
        "loop",
        "--task",
        TASK,
        "--scene",
        &fixture("scenes/recycling.json"),
        "--config",
        &fixture("config/fast.json"),
        "--mock-script",
        &fixture("scripts/recycling_improving.json"),
    ];
    let out = robocheck(&[&args[..], &["--format", "json"]].concat());
    assert_eq!(out.code, exit::OK, "{}", out.err);
    let scores = loop_scores(&out);
    assert!(scores.len() <= 5);
    assert!(scores.windows(2).all(|w| w[1] >= w[0]), "{scores:?}");
    assert_eq!(json(&out)["termination"], "AllOk");

    let text = robocheck(&args);
    assert!(text.out.starts_with("| Attempt | Score |"));
    assert!(text.out.contains("termination: AllOk"));

    let one = robocheck(&[&args[..], &["--max-attempts", "1", "--format", "json"]].concat());
    assert_eq!(json(&one)["attempts"].as_array().unwrap().len(), 1);
    assert_eq!(json(&one)["termination"], "MaxAttempts");
}

#[test]
fn loop_with_stagnant_script() {
    let out = robocheck(&[
        "loop",
        "--task",
        TASK,
        "--scene",
        &fixture("scenes/recycling.json"),
        "--mock-script",
        &fixture("scripts/recycling_stagnant.json"),
        "--format",
        "json",
    ]);
    assert_eq!(out.code, exit::OK);
    let doc = json(&out);
    assert_eq!(doc["termination"], "Unchanged");
    assert_eq!(doc["attempts"].as_array().unwrap().len(), 2);
}

#[test]
fn loop_generation_failure_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(
        dir.path(),
        "s.json",
        r#"[{"content": "no"}, {"content": "still no"}, {"content": "never"}]"#,
    );
    let out = robocheck(&[
        "loop",
        "--task",
        TASK,
        "--scene",
        &fixture("scenes/recycling.json"),
        "--mock-script",
        &script,
    ]);
    assert_eq!(out.code, exit::GENERATION);
    let exhausted = write(dir.path(), "e.json", "[]");
    let out = robocheck(&[
        "loop",
        "--task",
        TASK,
        "--scene",
        &fixture("scenes/recycling.json"),
        "--mock-script",
        &exhausted,
    ]);
    assert_eq!(out.code, exit::GENERATION);
}

#[test]
fn loop_memory_file_persists() {
    let dir = tempfile::tempdir().unwrap();
    let memory = dir
        .path()
        .join("memory.jsonl")
        .to_string_lossy()
        .into_owned();
    let out = robocheck(&[
        "loop",
        "--task",
        TASK,
        "--scene",
        &fixture("scenes/recycling.json"),
        "--mock-script",
        &fixture("scripts/recycling_stagnant.json"),
        "--memory",
        &memory,
    ]);
    assert_eq!(out.code, exit::OK);
    let store = robocheck_core::refine::MemoryStore::open(&memory).unwrap();
    assert_eq!(store.len(), 2);
}

#[test]
fn ablate_single_task() {
    let base = [
        "ablate",
        "--name",
        "recycling",
        "--task",
        TASK,
        "--scene",
        &fixture("scenes/recycling.json"),
        "--config",
        &fixture("config/fast.json"),
        "--external-script",
        &fixture("ablation/recycling_external.json"),
    ];
    let embedded = fixture("ablation/recycling_embedded.json");
    let out = robocheck(&[&base[..], &["--embedded-script", &embedded]].concat());
    assert_eq!(out.code, exit::OK, "{}", out.err);
    let table: Vec<&str> = out.out.lines().filter(|l| l.starts_with('|')).collect();
    assert_eq!(table.len(), 5, "{}", out.out);
    assert!(table[3].starts_with("| recycling"));
    assert!(table[4].starts_with("| Average"));

    let missing = robocheck(&base);
    assert_eq!(missing.code, exit::USAGE);
    let missing_file =
        robocheck(&[&base[..], &["--embedded-script", "/nonexistent.json"]].concat());
    assert_eq!(missing_file.code, exit::USAGE);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_robocheck");
    let status = Command::new(bin)
        .args([
            "run",
            &fixture("programs/recycling.rc"),
            "--scene",
            &fixture("scenes/recycling.json"),
        ])
        .arg("--out")
        .arg(tempfile::tempdir().unwrap().path().join("t.jsonl"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&status.stdout).contains("score 10/10"));
    let status = Command::new(bin).arg("verify").output().unwrap();
    assert_eq!(status.status.code(), Some(exit::USAGE));
}
