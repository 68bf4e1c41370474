//! Headless entry points for every workflow stage.
//!
//! [`run`] parses arguments and executes one subcommand, writing its document
//! to `out` and diagnostics to `err`, and returns the process exit code.

pub mod ablate;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use robocheck_core::critics::{
    all_critics, parse_selection, run_critics, score_index, worst_flag, CriticReport, Flag,
    ScoreIndex, BUILTIN_CRITICS,
};
use robocheck_core::kinematics::{KinematicsError, RobotModel};
use robocheck_core::program::{interpret, parse_program, InterpretError, Trajectory};
use robocheck_core::refine::{
    fix_loop, Env, LlmAdapter, LoopMode, LoopOptions, MemoryStore, MockAdapter, RefineError,
    RemoteAdapter, Termination,
};
use robocheck_core::scene::{Scene, SceneError};
use robocheck_core::settings::{Settings, SettingsError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const WARNING: i32 = 1;
    pub const ERROR: i32 = 2;
    pub const IK_UNREACHABLE: i32 = 3;
    pub const GENERATION: i32 = 4;
    pub const USAGE: i32 = 64;
    pub const DATA: i32 = 65;
    pub const NO_INPUT: i32 = 66;
    pub const SOFTWARE: i32 = 70;
}

/// Exit code for the worst flag of a report set.
pub fn exit_code(worst: Flag) -> i32 {
    match worst {
        Flag::Ok => exit::OK,
        Flag::Warning => exit::WARNING,
        Flag::Error => exit::ERROR,
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(exit::USAGE, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(exit::DATA, message)
    }

    pub fn generation(message: impl Into<String>) -> Self {
        Self::new(exit::GENERATION, message)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "robocheck",
    version,
    about = "Verify, repair and deploy robot programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    External,
    Embedded,
}

/// Options shared by every command that runs critics.
#[derive(Args, Debug, Clone)]
pub struct Checks {
    /// Robot model file; defaults to the bundled UR-class arm.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated critic names, or `all`.
    #[arg(long, default_value = "all")]
    pub critics: String,
    /// Flat JSON file of critic thresholds and interpreter parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run critics over a trajectory file.
    Verify {
        trajectory: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        checks: Checks,
    },
    /// Interpret a program, write its trajectory, then verify it.
    Run {
        program: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Trajectory output; defaults to the program path with a `.traj.jsonl` extension.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        checks: Checks,
    },
    /// Generate and repair a program until the critics are satisfied.
    Loop {
        #[arg(long)]
        task: String,
        #[arg(long)]
        scene: PathBuf,
        /// Scripted model answers; without it the remote adapter is used.
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        max_attempts: usize,
        #[arg(long, value_enum, default_value_t = Mode::External)]
        mode: Mode,
        /// Interaction log to load and append to.
        #[arg(long)]
        memory: Option<PathBuf>,
        #[command(flatten)]
        checks: Checks,
    },
    /// Compare embedded and external critic modes over scripted tasks.
    Ablate {
        /// Task list file.
        tasks: Option<PathBuf>,
        /// Single-task form: task name.
        #[arg(long, default_value = "task")]
        name: String,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        external_script: Option<PathBuf>,
        #[arg(long)]
        embedded_script: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        max_attempts: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Overrides the task list's configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "RC_BIND_ADDR", default_value = robocheck_service::DEFAULT_BIND_ADDR)]
        bind: String,
        #[arg(long, env = "RC_SCENE_DIR", default_value = "scenes")]
        scene_dir: PathBuf,
        #[arg(long, env = "RC_MODEL_FILE")]
        model: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Default deploy endpoint.
        #[arg(long, env = "RC_ROBOT_ADDR")]
        robot: Option<String>,
    },
    /// Run the stand-in robot endpoint.
    MockRobot {
        #[arg(long, default_value = "127.0.0.1:30002")]
        listen: String,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        dof: usize,
        /// Drop each connection after this many acknowledgements.
        #[arg(long)]
        max_acks: Option<usize>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "robocheck: {}", e.message);
            e.code
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::new(exit::NO_INPUT, format!("{}: {e}", path.display())))
}

pub(crate) fn load_scene(path: &Path) -> Result<Scene, CliError> {
    Scene::from_file(path).map_err(|e| match e {
        SceneError::Io(m) => CliError::new(exit::NO_INPUT, m),
        other => CliError::data(format!("{}: {other}", path.display())),
    })
}

fn load_model(path: Option<&Path>) -> Result<RobotModel, CliError> {
    match path {
        None => Ok(RobotModel::ur_class()),
        Some(p) => RobotModel::from_file(p).map_err(|e| match e {
            KinematicsError::Io(m) => CliError::new(exit::NO_INPUT, m),
            other => CliError::data(format!("{}: {other}", p.display())),
        }),
    }
}

fn load_settings(path: Option<&Path>) -> Result<Settings, CliError> {
    match path {
        None => Ok(Settings::default()),
        Some(p) => Settings::from_file(p).map_err(|e| match e {
            SettingsError::Io { .. } => CliError::new(exit::NO_INPUT, e.to_string()),
            other => CliError::data(format!("{}: {other}", p.display())),
        }),
    }
}

fn selection(list: &str) -> Result<BTreeSet<String>, CliError> {
    let sel = parse_selection(list);
    match sel.iter().find(|s| !BUILTIN_CRITICS.contains(&s.as_str())) {
        Some(bad) => Err(CliError::usage(format!(
            "unknown critic `{bad}` (known: {})",
            BUILTIN_CRITICS.join(", ")
        ))),
        None => Ok(sel),
    }
}

fn adapter(mock_script: Option<&Path>) -> Result<Arc<dyn LlmAdapter>, CliError> {
    match mock_script {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::usage(format!(
                    "mock script {} does not exist",
                    p.display()
                )));
            }
            let m = MockAdapter::from_file(p)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            Ok(Arc::new(m))
        }
        None => RemoteAdapter::from_env()
            .map(|a| Arc::new(a) as Arc<dyn LlmAdapter>)
            .map_err(|e| {
                CliError::usage(format!(
                    "{e}; pass --mock-script or configure the remote adapter"
                ))
            }),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::new(exit::SOFTWARE, format!("writing output: {e}")))
}

/// Reports of the selected critics plus the score over all five.
pub struct Audit {
    pub reports: Vec<CriticReport>,
    pub score: ScoreIndex,
}

pub fn audit(
    traj: &Trajectory,
    scene: &Scene,
    model: &RobotModel,
    settings: &Settings,
    selected: &BTreeSet<String>,
) -> Result<Audit, CliError> {
    let all = run_critics(traj, scene, model, &settings.critics, &all_critics())
        .map_err(|e| CliError::data(e.to_string()))?;
    let score = score_index(&all).map_err(|e| CliError::new(exit::SOFTWARE, e.to_string()))?;
    let reports = all
        .into_iter()
        .filter(|r| selected.contains(&r.critic))
        .collect();
    Ok(Audit { reports, score })
}

/// Human-readable report listing: one line per critic, then the score.
pub fn format_reports(reports: &[CriticReport], score: &ScoreIndex) -> String {
    let mut s = String::new();
    for r in reports {
        let mut line = format!(
            "{:<12} {:<8} {}",
            r.critic,
            r.flag.to_string(),
            r.explanation
        );
        if r.flag != Flag::Ok && !r.fix_hint.is_empty() {
            line.push(' ');
            line.push_str(&r.fix_hint);
        }
        s.push_str(line.trim_end());
        s.push('\n');
    }
    s.push_str(&format!("score {}/10\n", score.total));
    s
}

fn report_doc(audit: &Audit, extra: serde_json::Value) -> String {
    let mut doc = json!({
        "reports": audit.reports,
        "score": audit.score,
        "worst": worst_flag(&audit.reports),
    });
    if let (Some(d), serde_json::Value::Object(e)) = (doc.as_object_mut(), extra) {
        d.extend(e);
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("report document serializes");
    text.push('\n');
    text
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Verify {
            trajectory,
            scene,
            checks,
        } => {
            let selected = selection(&checks.critics)?;
            let doc = read(&trajectory)?;
            let traj = Trajectory::from_jsonl(&doc)
                .map_err(|e| CliError::data(format!("{}: {e}", trajectory.display())))?;
            if traj.states.is_empty() {
                return Err(CliError::data(format!(
                    "{}: no states",
                    trajectory.display()
                )));
            }
            let scene = load_scene(&scene)?;
            let model = load_model(checks.model.as_deref())?;
            let settings = load_settings(checks.config.as_deref())?;
            let audit = audit(&traj, &scene, &model, &settings, &selected)?;
            let text = match checks.format {
                Format::Text => format_reports(&audit.reports, &audit.score),
                Format::Json => report_doc(&audit, json!({})),
            };
            emit(out, &text)?;
            Ok(exit_code(worst_flag(&audit.reports)))
        }
        Command::Run {
            program,
            scene,
            out: traj_path,
            checks,
        } => {
            let selected = selection(&checks.critics)?;
            let source = read(&program)?;
            let parsed = parse_program(&source)
                .map_err(|e| CliError::data(format!("{}: {e}", program.display())))?;
            let scene = load_scene(&scene)?;
            let model = load_model(checks.model.as_deref())?;
            let settings = load_settings(checks.config.as_deref())?;
            let traj =
                interpret(&parsed, &scene, &model, &settings.interpreter).map_err(|e| match e {
                    InterpretError::IkUnreachable { .. } => {
                        CliError::new(exit::IK_UNREACHABLE, format!("{}: {e}", program.display()))
                    }
                    other => CliError::data(format!("{}: {other}", program.display())),
                })?;
            let traj_path = traj_path.unwrap_or_else(|| program.with_extension("traj.jsonl"));
            std::fs::write(&traj_path, traj.to_jsonl()).map_err(|e| {
                CliError::new(exit::SOFTWARE, format!("{}: {e}", traj_path.display()))
            })?;
            let audit = audit(&traj, &scene, &model, &settings, &selected)?;
            let text = match checks.format {
                Format::Text => format!(
                    "trajectory {} ({} states, {} ms)\n{}",
                    traj_path.display(),
                    traj.states.len(),
                    traj.duration_ms(),
                    format_reports(&audit.reports, &audit.score)
                ),
                Format::Json => report_doc(
                    &audit,
                    json!({
                        "trajectory": traj_path,
                        "states": traj.states.len(),
                        "duration_ms": traj.duration_ms(),
                    }),
                ),
            };
            emit(out, &text)?;
            Ok(exit_code(worst_flag(&audit.reports)))
        }
        Command::Loop {
            task,
            scene,
            mock_script,
            max_attempts,
            mode,
            memory,
            checks,
        } => {
            if max_attempts == 0 {
                return Err(CliError::usage("--max-attempts must be at least 1"));
            }
            let selected = selection(&checks.critics)?;
            let scene = load_scene(&scene)?;
            let model = load_model(checks.model.as_deref())?;
            let settings = load_settings(checks.config.as_deref())?;
            let llm = adapter(mock_script.as_deref())?;
            let memory = match memory {
                Some(p) => MemoryStore::open(&p)
                    .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
                None => MemoryStore::in_memory(),
            };
            let env = Env {
                scene: &scene,
                model: &model,
                interpreter: &settings.interpreter,
                critics: &settings.critics,
            };
            let opts = LoopOptions {
                max_attempts,
                mode: match mode {
                    Mode::External => LoopMode::External,
                    Mode::Embedded => LoopMode::Embedded,
                },
                selected,
                ..LoopOptions::default()
            };
            let result =
                fix_loop(&task, &env, llm.as_ref(), &memory, &opts).map_err(|e| match e {
                    RefineError::InvalidArgument(m) => CliError::usage(m),
                    RefineError::Memory(m) => CliError::new(exit::SOFTWARE, m.to_string()),
                    other => CliError::generation(other.to_string()),
                })?;
            let text = match checks.format {
                Format::Json => {
                    let mut t =
                        serde_json::to_string_pretty(&result).expect("loop result serializes");
                    t.push('\n');
                    t
                }
                Format::Text => {
                    let mut t = String::from("| Attempt | Score |\n|---------|-------|\n");
                    for a in &result.attempts {
                        let score = a.score.as_ref().map_or("-".into(), |s| s.total.to_string());
                        t.push_str(&format!("| {:>7} | {:>5} |\n", a.index, score));
                    }
                    t.push_str(&format!("termination: {:?}\n", result.termination));
                    if let Some(p) = result.final_program() {
                        t.push_str("final program:\n");
                        t.push_str(p);
                        if !p.ends_with('\n') {
                            t.push('\n');
                        }
                    }
                    t
                }
            };
            emit(out, &text)?;
            if result.termination == Termination::GenerationFailure {
                return Err(CliError::generation("no usable program was generated"));
            }
            Ok(exit::OK)
        }
        Command::Ablate {
            tasks,
            name,
            task,
            scene,
            external_script,
            embedded_script,
            max_attempts,
            model,
            config,
            format,
        } => {
            if max_attempts == 0 {
                return Err(CliError::usage("--max-attempts must be at least 1"));
            }
            let set = match (tasks, task, scene) {
                (Some(path), None, None) => ablate::TaskSet::from_file(&path)?,
                (None, Some(request), Some(scene)) => ablate::TaskSet {
                    config: None,
                    tasks: vec![ablate::TaskSpec {
                        name,
                        request,
                        scene,
                        external_script,
                        embedded_script,
                    }],
                },
                _ => {
                    return Err(CliError::usage(
                        "give a task list file, or --task and --scene",
                    ))
                }
            };
            let settings = load_settings(config.as_deref().or(set.config.as_deref()))?;
            let model = load_model(model.as_deref())?;
            let table = ablate::run_ablation(&set, &settings, &model, max_attempts)?;
            let text = match format {
                Format::Text => table.to_text(),
                Format::Json => {
                    let [ea, es, xa, xs] = table.averages();
                    let doc = json!({
                        "rows": table.rows,
                        "average": {
                            "embedded": {"attempts": ea, "score": es},
                            "external": {"attempts": xa, "score": xs},
                        },
                    });
                    format!(
                        "{}\n",
                        serde_json::to_string_pretty(&doc).expect("table serializes")
                    )
                }
            };
            emit(out, &text)?;
            Ok(exit::OK)
        }
        Command::Serve {
            bind,
            scene_dir,
            model,
            config,
            mock_script,
            memory,
            robot,
        } => {
            let cfg = robocheck_service::ServiceConfig {
                scene_dir,
                model: load_model(model.as_deref())?,
                settings: load_settings(config.as_deref())?,
                robot_addr: robot,
                deploy: robocheck_service::DeployOptions::default(),
            };
            let llm = adapter(mock_script.as_deref())?;
            let memory = match memory {
                Some(p) => MemoryStore::open(&p)
                    .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
                None => MemoryStore::in_memory(),
            };
            let state = robocheck_service::AppState::new(cfg, llm, Arc::new(memory));
            let rt = tokio::runtime::Runtime::new()
                .map_err(|e| CliError::new(exit::SOFTWARE, e.to_string()))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .map_err(|e| CliError::usage(format!("cannot bind {bind}: {e}")))?;
                let addr = listener
                    .local_addr()
                    .map_err(|e| CliError::new(exit::SOFTWARE, e.to_string()))?;
                emit(out, &format!("listening on http://{addr}\n"))?;
                let _ = out.flush();
                robocheck_service::serve(listener, state)
                    .await
                    .map_err(|e| CliError::new(exit::SOFTWARE, e.to_string()))
            })?;
            Ok(exit::OK)
        }
        Command::MockRobot {
            listen,
            log,
            dof,
            max_acks,
        } => {
            let robot = robocheck_service::MockRobot::bind(
                &listen,
                robocheck_service::MockRobotConfig {
                    dof,
                    log_path: log,
                    max_acks,
                },
            )
            .map_err(|e| CliError::usage(format!("cannot bind {listen}: {e}")))?;
            let addr = robot
                .local_addr()
                .map_err(|e| CliError::new(exit::SOFTWARE, e.to_string()))?;
            emit(out, &format!("mock robot listening on {addr}\n"))?;
            let _ = out.flush();
            robot
                .run()
                .map_err(|e| CliError::new(exit::SOFTWARE, e.to_string()))?;
            Ok(exit::OK)
        }
    }
}
