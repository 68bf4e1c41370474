//! Embedded-versus-external comparison over a set of scripted tasks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use robocheck_core::critics::Flag;
use robocheck_core::kinematics::RobotModel;
use robocheck_core::refine::{
    fix_loop, Env, LoopMode, LoopOptions, LoopResult, MemoryStore, MockAdapter, RefineError,
    Termination,
};
use robocheck_core::scene::Scene;
use robocheck_core::settings::Settings;

use crate::CliError;

/// Task list file. Relative paths inside it resolve against its directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSet {
    #[serde(default)]
    pub config: Option<PathBuf>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub request: String,
    pub scene: PathBuf,
    #[serde(default)]
    pub external_script: Option<PathBuf>,
    #[serde(default)]
    pub embedded_script: Option<PathBuf>,
}

impl TaskSet {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let doc = crate::read(path)?;
        let mut set: TaskSet = serde_json::from_str(&doc)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| *p = base.join(&*p);
        if let Some(c) = &mut set.config {
            rebase(c);
        }
        for t in &mut set.tasks {
            rebase(&mut t.scene);
            t.external_script.as_mut().map(rebase);
            t.embedded_script.as_mut().map(rebase);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeResult {
    pub attempts: usize,
    pub final_score: Option<u8>,
    pub termination: Termination,
    /// Critics still flagged Warning or Error on the last scored attempt.
    pub unresolved: Vec<String>,
}

impl ModeResult {
    fn from_loop(r: &LoopResult) -> Self {
        let unresolved = r
            .attempts
            .iter()
            .rev()
            .find(|a| a.score.is_some())
            .map(|a| {
                a.reports
                    .iter()
                    .filter(|r| r.flag != Flag::Ok)
                    .map(|r| r.critic.clone())
                    .collect()
            })
            .unwrap_or_default();
        ModeResult {
            attempts: r.attempt_count(),
            final_score: r.final_score(),
            termination: r.termination,
            unresolved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub task: String,
    pub embedded: ModeResult,
    pub external: ModeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl AblationTable {
    /// Mean attempts and final scores: (embedded attempts, embedded score,
    /// external attempts, external score). Missing scores count as zero.
    pub fn averages(&self) -> [f64; 4] {
        let col = |f: &dyn Fn(&AblationRow) -> f64| mean(self.rows.iter().map(f));
        [
            col(&|r| r.embedded.attempts as f64),
            col(&|r| f64::from(r.embedded.final_score.unwrap_or(0))),
            col(&|r| r.external.attempts as f64),
            col(&|r| f64::from(r.external.final_score.unwrap_or(0))),
        ]
    }

    /// Table with the task rows, grouped Embedded and External columns of
    /// Attempt and Score, and an Average row.
    pub fn to_text(&self) -> String {
        let score = |s: Option<u8>| s.map_or("-".to_string(), |s| s.to_string());
        let mut body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.task.clone(),
                    r.embedded.attempts.to_string(),
                    score(r.embedded.final_score),
                    r.external.attempts.to_string(),
                    score(r.external.final_score),
                ]
            })
            .collect();
        let [ea, es, xa, xs] = self.averages().map(|v| format!("{v:.1}"));
        body.push(["Average".into(), ea, es, xa, xs]);
        let head = ["Task", "Attempt", "Score", "Attempt", "Score"];
        let mut w = head.map(str::len);
        for row in &body {
            for (k, c) in row.iter().enumerate() {
                w[k] = w[k].max(c.len());
            }
        }
        // Each mode group spans its two columns plus the separator between them.
        let group = |a: usize, b: usize| w[a] + w[b] + 3;
        let mut out = format!(
            "| {:w0$} | {:g1$} | {:g2$} |\n",
            "",
            "Embedded",
            "External",
            w0 = w[0],
            g1 = group(1, 2),
            g2 = group(3, 4)
        );
        let line = |cells: &[String; 5], left: bool| {
            let mut l = format!("| {:w0$} |", cells[0], w0 = w[0]);
            for k in 1..5 {
                if left {
                    l.push_str(&format!(" {:wk$} |", cells[k], wk = w[k]));
                } else {
                    l.push_str(&format!(" {:>wk$} |", cells[k], wk = w[k]));
                }
            }
            l.push('\n');
            l
        };
        out.push_str(&line(&head.map(String::from), true));
        out.push('|');
        for wk in w {
            out.push_str(&"-".repeat(wk + 2));
            out.push('|');
        }
        out.push('\n');
        for row in &body {
            out.push_str(&line(row, false));
        }
        for r in self
            .rows
            .iter()
            .filter(|r| !r.embedded.unresolved.is_empty())
        {
            let _ = writeln!(
                out,
                "{}: embedded mode left {} unresolved",
                r.task,
                r.embedded.unresolved.join(", ")
            );
        }
        out
    }
}

fn run_mode(
    task: &TaskSpec,
    script: &Path,
    mode: LoopMode,
    scene: &Scene,
    model: &RobotModel,
    settings: &Settings,
    max_attempts: usize,
) -> Result<ModeResult, CliError> {
    let llm = MockAdapter::from_file(script)
        .map_err(|e| CliError::data(format!("{}: {e}", script.display())))?;
    let env = Env {
        scene,
        model,
        interpreter: &settings.interpreter,
        critics: &settings.critics,
    };
    let opts = LoopOptions {
        max_attempts,
        mode,
        ..LoopOptions::default()
    };
    let result = fix_loop(&task.request, &env, &llm, &MemoryStore::in_memory(), &opts).map_err(
        |e| match e {
            RefineError::InvalidArgument(m) => CliError::usage(m),
            other => CliError::generation(format!("{} ({mode:?}): {other}", task.name)),
        },
    )?;
    if result.termination == Termination::GenerationFailure {
        return Err(CliError::generation(format!(
            "{} ({mode:?}): no usable program after {} answers",
            task.name,
            result.attempt_count()
        )));
    }
    Ok(ModeResult::from_loop(&result))
}

/// Runs every task in both modes, each with a fresh memory and its own script.
pub fn run_ablation(
    set: &TaskSet,
    settings: &Settings,
    model: &RobotModel,
    max_attempts: usize,
) -> Result<AblationTable, CliError> {
    let mut rows = Vec::new();
    for task in &set.tasks {
        let (Some(external), Some(embedded)) = (&task.external_script, &task.embedded_script)
        else {
            return Err(CliError::usage(format!(
                "task `{}` needs both an external and an embedded script",
                task.name
            )));
        };
        for script in [external, embedded] {
            if !script.is_file() {
                return Err(CliError::usage(format!(
                    "script {} does not exist",
                    script.display()
                )));
            }
        }
        let scene = crate::load_scene(&task.scene)?;
        rows.push(AblationRow {
            task: task.name.clone(),
            embedded: run_mode(
                task,
                embedded,
                LoopMode::Embedded,
                &scene,
                model,
                settings,
                max_attempts,
            )?,
            external: run_mode(
                task,
                external,
                LoopMode::External,
                &scene,
                model,
                settings,
                max_attempts,
            )?,
        });
    }
    Ok(AblationTable { rows })
}
