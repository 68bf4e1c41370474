use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::llm::LlmAdapter;
use super::memory::{InteractionRecord, MemoryError, MemoryStore};
use super::prompt::{build_request, extract_program, normalize_program, PromptParts, CRITIC_RULES};
use super::RefineError;
use crate::critics::{
    all_critics, fix_message, run_critics, score_index, CriticConfig, CriticError, CriticReport,
    Flag, ScoreIndex, BUILTIN_CRITICS,
};
use crate::kinematics::RobotModel;
use crate::program::{interpret, parse_program, InterpreterConfig, Trajectory};
use crate::scene::Scene;

/// Name of the synthetic report emitted when a program cannot be interpreted.
pub const INTERPRETER: &str = "interpreter";

/// Consecutive unparsable answers after which the loop gives up.
const MAX_GENERATION_FAILURES: usize = 3;

/// Everything needed to turn program text into critic reports.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub scene: &'a Scene,
    pub model: &'a RobotModel,
    pub interpreter: &'a InterpreterConfig,
    pub critics: &'a CriticConfig,
}

/// Where critic knowledge enters the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    /// Critics run on each trajectory and their fix messages drive revisions.
    External,
    /// Critic rules go into the system prompt; nothing is fed back. Scores are
    /// still computed for comparison but never reach the model or the stop rule.
    Embedded,
}

#[derive(Debug, Clone)]
pub struct LoopOptions {
    pub max_attempts: usize,
    pub mode: LoopMode,
    /// Records retrieved from memory for each prompt.
    pub retrieve_k: usize,
    /// Critics whose feedback is used. The score always covers all five.
    pub selected: BTreeSet<String>,
}

impl Default for LoopOptions {
    fn default() -> Self {
        LoopOptions {
            max_attempts: 5,
            mode: LoopMode::External,
            retrieve_k: 3,
            selected: all_critics(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    AllOk,
    Unchanged,
    MaxAttempts,
    GenerationFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// 1-based.
    pub index: usize,
    pub program: String,
    pub explanation: String,
    pub reports: Vec<CriticReport>,
    /// `None` when the answer did not parse.
    pub score: Option<ScoreIndex>,
    /// Parse error of an unusable answer.
    pub error: Option<String>,
    pub record_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopResult {
    pub attempts: Vec<Attempt>,
    pub termination: Termination,
}

impl LoopResult {
    pub fn attempt_count(&self) -> usize {
        self.attempts.len()
    }

    /// Scores of the attempts that produced a program, in order.
    pub fn scores(&self) -> Vec<u8> {
        self.attempts
            .iter()
            .filter_map(|a| a.score.as_ref().map(|s| s.total))
            .collect()
    }

    pub fn final_score(&self) -> Option<u8> {
        self.scores().last().copied()
    }

    pub fn final_program(&self) -> Option<&str> {
        self.attempts
            .iter()
            .rev()
            .find(|a| a.score.is_some())
            .map(|a| a.program.as_str())
    }
}

/// Outcome of checking one program.
#[derive(Debug, Clone)]
pub struct Verification {
    /// `None` when interpretation failed.
    pub trajectory: Option<Trajectory>,
    /// Reports of the selected critics, or a single interpreter report.
    pub reports: Vec<CriticReport>,
    /// Over all five built-in critics; zero when interpretation failed.
    pub score: ScoreIndex,
}

/// Parses, interprets and audits a program. Interpretation failures become a
/// single `interpreter` Error report rather than an error.
pub fn verify_program(
    source: &str,
    env: &Env<'_>,
    selected: &BTreeSet<String>,
) -> Result<Verification, RefineError> {
    let program =
        parse_program(source).map_err(|e| RefineError::GenerationFailure(e.to_string()))?;
    if let Some(unknown) = selected
        .iter()
        .find(|s| !BUILTIN_CRITICS.contains(&s.as_str()))
    {
        return Err(CriticError::UnknownCritic(unknown.clone()).into());
    }
    match interpret(&program, env.scene, env.model, env.interpreter) {
        Ok(traj) => {
            let all = run_critics(&traj, env.scene, env.model, env.critics, &all_critics())?;
            let score = score_index(&all)?;
            let reports = all
                .into_iter()
                .filter(|r| selected.contains(&r.critic))
                .collect();
            Ok(Verification {
                trajectory: Some(traj),
                reports,
                score,
            })
        }
        Err(e) => {
            let at = e
                .line()
                .map(|l| format!(" on line {l}"))
                .unwrap_or_default();
            let report = CriticReport {
                critic: INTERPRETER.to_owned(),
                flag: Flag::Error,
                explanation: format!("The program cannot be executed: {e}."),
                fix_hint: format!(
                    "Change the instruction{at} so every move_to target is reachable and every object id exists in the scene."
                ),
                measurement: None,
                thresholds: Default::default(),
            };
            Ok(Verification {
                trajectory: None,
                reports: vec![report],
                score: ScoreIndex {
                    points: BUILTIN_CRITICS
                        .iter()
                        .map(|c| (c.to_string(), 0))
                        .collect::<IndexMap<_, _>>(),
                    total: 0,
                },
            })
        }
    }
}

/// Program text plus the model's explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    pub program: String,
    pub explanation: String,
}

fn ask(
    llm: &dyn LlmAdapter,
    parts: &PromptParts<'_>,
) -> Result<(Revision, Option<String>), RefineError> {
    let answer = llm.complete(&build_request(parts))?;
    let (program, explanation) = extract_program(&answer.content);
    let error = parse_program(&program).err().map(|e| e.to_string());
    Ok((
        Revision {
            program,
            explanation,
        },
        error,
    ))
}

/// Single-shot generation for a user request.
pub fn generate_program(
    request: &str,
    env: &Env<'_>,
    llm: &dyn LlmAdapter,
    memory: &MemoryStore,
) -> Result<Revision, RefineError> {
    let retrieved = memory.retrieve(request, 3);
    let environment = env.scene.describe();
    let (rev, error) = ask(
        llm,
        &PromptParts {
            environment: &environment,
            retrieved: &retrieved,
            user: request,
            ..PromptParts::default()
        },
    )?;
    match error {
        Some(e) => Err(RefineError::GenerationFailure(e)),
        None => Ok(rev),
    }
}

/// Single-shot revision addressing one critic report. The result is returned
/// for review, not executed.
pub fn apply_fix(
    record: &InteractionRecord,
    report: &CriticReport,
    env: &Env<'_>,
    llm: &dyn LlmAdapter,
    memory: &MemoryStore,
) -> Result<Revision, RefineError> {
    let message = fix_message(report).map_err(|e| match e {
        CriticError::NoViolation(c) => RefineError::NoViolation(c),
        other => other.into(),
    })?;
    let retrieved = memory.retrieve(&record.request, 3);
    let environment = env.scene.describe();
    let fixes = [message];
    let (rev, error) = ask(
        llm,
        &PromptParts {
            rules: None,
            environment: &environment,
            retrieved: &retrieved,
            user: &record.request,
            current_program: Some(&record.program),
            fix_messages: &fixes,
        },
    )?;
    match error {
        Some(e) => Err(RefineError::GenerationFailure(e)),
        None => Ok(rev),
    }
}

/// Generate, verify, store and revise until every selected critic is OK, the
/// program stops changing, or the attempt budget runs out.
pub fn fix_loop(
    task: &str,
    env: &Env<'_>,
    llm: &dyn LlmAdapter,
    memory: &MemoryStore,
    opts: &LoopOptions,
) -> Result<LoopResult, RefineError> {
    if opts.max_attempts == 0 {
        return Err(RefineError::InvalidArgument(
            "max_attempts must be at least 1".into(),
        ));
    }
    let environment = env.scene.describe();
    let rules = (opts.mode == LoopMode::Embedded).then_some(CRITIC_RULES);
    let mut attempts: Vec<Attempt> = Vec::new();
    // Last parsable program and the feedback to send with it.
    let mut current: Option<(String, Vec<String>)> = None;
    let mut failures = 0;

    for index in 1..=opts.max_attempts {
        let retrieved = memory.retrieve(task, opts.retrieve_k);
        let (program, fixes) = match &current {
            Some((p, f)) => (Some(p.as_str()), f.as_slice()),
            None => (None, &[][..]),
        };
        let (rev, error) = ask(
            llm,
            &PromptParts {
                rules,
                environment: &environment,
                retrieved: &retrieved,
                user: task,
                current_program: program,
                fix_messages: fixes,
            },
        )?;

        if let Some(error) = error {
            failures += 1;
            attempts.push(Attempt {
                index,
                program: rev.program,
                explanation: rev.explanation,
                reports: Vec::new(),
                score: None,
                error: Some(error.clone()),
                record_id: None,
            });
            if failures >= MAX_GENERATION_FAILURES {
                return Ok(LoopResult {
                    attempts,
                    termination: Termination::GenerationFailure,
                });
            }
            if opts.mode == LoopMode::External {
                if let Some((_, f)) = &mut current {
                    *f = vec![format!("Error: The previous answer could not be parsed ({error}). Return the full program in one code block.")];
                }
            }
            continue;
        }
        failures = 0;

        let unchanged = current
            .as_ref()
            .is_some_and(|(p, _)| normalize_program(p) == normalize_program(&rev.program));
        let checked = verify_program(&rev.program, env, &opts.selected)?;

        let mut record = InteractionRecord::new(task, rev.program.clone());
        record.score = Some(checked.score.clone());
        if opts.mode == LoopMode::External {
            record.feedback = checked.reports.clone();
        }
        let record_id = match memory.put(record) {
            Ok(id) => Some(id),
            Err(MemoryError::GenerationFailure(_)) => None,
            Err(e) => return Err(e.into()),
        };

        let all_ok = checked.reports.iter().all(|r| r.flag == Flag::Ok);
        let fixes = match opts.mode {
            LoopMode::External => checked
                .reports
                .iter()
                .filter_map(|r| fix_message(r).ok())
                .collect(),
            LoopMode::Embedded => Vec::new(),
        };
        attempts.push(Attempt {
            index,
            program: rev.program.clone(),
            explanation: rev.explanation,
            reports: checked.reports,
            score: Some(checked.score),
            error: None,
            record_id,
        });
        current = Some((rev.program, fixes));

        if opts.mode == LoopMode::External && all_ok {
            return Ok(LoopResult {
                attempts,
                termination: Termination::AllOk,
            });
        }
        if unchanged {
            return Ok(LoopResult {
                attempts,
                termination: Termination::Unchanged,
            });
        }
    }
    Ok(LoopResult {
        attempts,
        termination: Termination::MaxAttempts,
    })
}
