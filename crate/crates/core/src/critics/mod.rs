//! Motion-level critics.
//!
//! Each critic inspects a [`Trajectory`] against one safety or performance
//! constraint and returns a [`CriticReport`] carrying a [`Flag`], a plain
//! explanation, a fix hint phrased in terms of the program API, and the
//! measurement that decided the flag. Critics live in a [`CriticRegistry`] so
//! new ones plug in without touching the existing five.

mod builtin;
mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::RobotModel;
use crate::program::Trajectory;
use crate::scene::Scene;

pub use builtin::{
    critic_collision, critic_ee_pose, critic_joint_speed, critic_pinch_point, critic_space_usage,
};
pub use config::CriticConfig;

pub const SPACE_USAGE: &str = "space_usage";
pub const COLLISION: &str = "collision";
pub const JOINT_SPEED: &str = "joint_speed";
pub const EE_POSE: &str = "ee_pose";
pub const PINCH_POINT: &str = "pinch_point";

/// Names of the built-in critics, in registration order.
pub const BUILTIN_CRITICS: [&str; 5] = [SPACE_USAGE, COLLISION, JOINT_SPEED, EE_POSE, PINCH_POINT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flag {
    #[serde(rename = "OK")]
    Ok,
    Warning,
    Error,
}

impl Flag {
    /// Points toward the 0-10 quality index.
    pub fn points(self) -> u8 {
        match self {
            Flag::Ok => 2,
            Flag::Warning => 1,
            Flag::Error => 0,
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flag::Ok => "OK",
            Flag::Warning => "Warning",
            Flag::Error => "Error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub unit: String,
    /// Timestamp of the state where the deciding value was observed.
    pub t_ms: u64,
    /// Index of that state in the trajectory.
    pub step: usize,
    /// What was measured: a link, an object, or a link pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticReport {
    pub critic: String,
    pub flag: Flag,
    pub explanation: String,
    pub fix_hint: String,
    pub measurement: Option<Measurement>,
    pub thresholds: BTreeMap<String, f64>,
}

impl CriticReport {
    pub fn ok(critic: &str, explanation: impl Into<String>) -> Self {
        CriticReport {
            critic: critic.to_owned(),
            flag: Flag::Ok,
            explanation: explanation.into(),
            fix_hint: String::new(),
            measurement: None,
            thresholds: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriticError {
    #[error("unknown critic `{0}`")]
    UnknownCritic(String),
    #[error("timestamps are not strictly increasing at state {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("expected one report for each of: {expected:?}")]
    IncompleteReports { expected: Vec<String> },
    #[error("report from `{0}` has no violation to fix")]
    NoViolation(String),
    #[error("invalid critic configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Scene(String),
}

/// Everything a critic may look at.
#[derive(Clone, Copy)]
pub struct CriticContext<'a> {
    pub trajectory: &'a Trajectory,
    pub scene: &'a Scene,
    pub model: &'a RobotModel,
    pub config: &'a CriticConfig,
}

pub trait Critic: Send + Sync {
    fn name(&self) -> &str;

    /// Configuration keys this critic reads.
    fn config_keys(&self) -> &[&'static str];

    fn evaluate(&self, ctx: &CriticContext<'_>) -> Result<CriticReport, CriticError>;
}

type CriticFn = dyn Fn(&CriticContext<'_>) -> Result<CriticReport, CriticError> + Send + Sync;

struct FnCritic {
    name: String,
    keys: Vec<&'static str>,
    f: Box<CriticFn>,
}

impl Critic for FnCritic {
    fn name(&self) -> &str {
        &self.name
    }

    fn config_keys(&self) -> &[&'static str] {
        &self.keys
    }

    fn evaluate(&self, ctx: &CriticContext<'_>) -> Result<CriticReport, CriticError> {
        (self.f)(ctx)
    }
}

/// Ordered set of critics. Reports always come back in registration order.
pub struct CriticRegistry {
    critics: Vec<Box<dyn Critic>>,
}

impl Default for CriticRegistry {
    fn default() -> Self {
        let mut r = CriticRegistry::empty();
        r.register_fn(SPACE_USAGE, &["space_warn_ratio"], |c| {
            critic_space_usage(c.trajectory, c.scene, c.model, c.config)
        });
        r.register_fn(COLLISION, &["d_warn"], |c| {
            critic_collision(c.trajectory, c.scene, c.model, c.config)
        });
        r.register_fn(JOINT_SPEED, &["v_warn", "v_max"], |c| {
            critic_joint_speed(c.trajectory, c.config)
        });
        r.register_fn(EE_POSE, &["score_warn", "score_err"], |c| {
            critic_ee_pose(c.trajectory, c.model, c.config)
        });
        r.register_fn(PINCH_POINT, &["d_min", "d_max"], |c| {
            Ok(critic_pinch_point(c.trajectory, c.config))
        });
        r
    }
}

impl CriticRegistry {
    pub fn empty() -> Self {
        CriticRegistry {
            critics: Vec::new(),
        }
    }

    /// Adds a critic; a critic with the same name is replaced in place.
    pub fn register(&mut self, critic: Box<dyn Critic>) {
        match self.critics.iter().position(|c| c.name() == critic.name()) {
            Some(i) => self.critics[i] = critic,
            None => self.critics.push(critic),
        }
    }

    pub fn register_fn<F>(&mut self, name: &str, keys: &[&'static str], f: F)
    where
        F: Fn(&CriticContext<'_>) -> Result<CriticReport, CriticError> + Send + Sync + 'static,
    {
        self.register(Box::new(FnCritic {
            name: name.to_owned(),
            keys: keys.to_vec(),
            f: Box::new(f),
        }));
    }

    pub fn names(&self) -> Vec<&str> {
        self.critics.iter().map(|c| c.name()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.critics.iter().any(|c| c.name() == name)
    }

    /// Configuration values each critic reads, for display.
    pub fn describe(&self, cfg: &CriticConfig) -> Vec<(String, BTreeMap<String, f64>)> {
        let all = cfg.as_map();
        self.critics
            .iter()
            .map(|c| {
                let vals = c
                    .config_keys()
                    .iter()
                    .filter_map(|k| all.get(*k).map(|v| (k.to_string(), *v)))
                    .collect();
                (c.name().to_owned(), vals)
            })
            .collect()
    }

    /// Runs exactly the selected critics, concurrently, and returns their
    /// reports in registration order.
    pub fn run(
        &self,
        ctx: &CriticContext<'_>,
        selected: &BTreeSet<String>,
    ) -> Result<Vec<CriticReport>, CriticError> {
        if let Some(unknown) = selected.iter().find(|s| !self.contains(s)) {
            return Err(CriticError::UnknownCritic(unknown.clone()));
        }
        ctx.config.validate()?;
        self.critics
            .par_iter()
            .filter(|c| selected.contains(c.name()))
            .map(|c| c.evaluate(ctx))
            .collect()
    }

    pub fn run_all(&self, ctx: &CriticContext<'_>) -> Result<Vec<CriticReport>, CriticError> {
        let all = self.names().into_iter().map(str::to_owned).collect();
        self.run(ctx, &all)
    }
}

/// Runs the selected built-in critics.
pub fn run_critics(
    trajectory: &Trajectory,
    scene: &Scene,
    model: &RobotModel,
    config: &CriticConfig,
    selected: &BTreeSet<String>,
) -> Result<Vec<CriticReport>, CriticError> {
    let ctx = CriticContext {
        trajectory,
        scene,
        model,
        config,
    };
    CriticRegistry::default().run(&ctx, selected)
}

/// The full set of built-in critic names.
pub fn all_critics() -> BTreeSet<String> {
    BUILTIN_CRITICS.iter().map(|s| s.to_string()).collect()
}

/// Parses a comma-separated critic list; `all` or an empty string selects every
/// built-in critic. Names are not validated here.
pub fn parse_selection(list: &str) -> BTreeSet<String> {
    let names: BTreeSet<String> = list
        .split(',')
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() || names.iter().any(|n| n == "all") {
        all_critics()
    } else {
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreIndex {
    pub points: IndexMap<String, u8>,
    pub total: u8,
}

impl ScoreIndex {
    /// Scores `reports` against the expected critic set: exactly one report per
    /// name, `Error` = 0, `Warning` = 1, `OK` = 2.
    pub fn from_reports(reports: &[CriticReport], expected: &[&str]) -> Result<Self, CriticError> {
        let incomplete = || CriticError::IncompleteReports {
            expected: expected.iter().map(|s| s.to_string()).collect(),
        };
        if reports.len() != expected.len() {
            return Err(incomplete());
        }
        let mut points = IndexMap::new();
        for name in expected {
            let mut matching = reports.iter().filter(|r| r.critic == *name);
            let r = matching.next().ok_or_else(incomplete)?;
            if matching.next().is_some() {
                return Err(incomplete());
            }
            points.insert(name.to_string(), r.flag.points());
        }
        let total = points.values().sum();
        Ok(ScoreIndex { points, total })
    }
}

/// 0-10 quality index over one report per built-in critic.
pub fn score_index(reports: &[CriticReport]) -> Result<ScoreIndex, CriticError> {
    ScoreIndex::from_reports(reports, &BUILTIN_CRITICS)
}

/// The structured feedback forwarded to the language model:
/// `"<Flag>: <explanation> <fix_hint>"`.
pub fn fix_message(report: &CriticReport) -> Result<String, CriticError> {
    if report.flag == Flag::Ok {
        return Err(CriticError::NoViolation(report.critic.clone()));
    }
    Ok(format!(
        "{}: {} {}",
        report.flag, report.explanation, report.fix_hint
    ))
}

/// Worst flag among `reports`, `OK` when empty.
pub fn worst_flag(reports: &[CriticReport]) -> Flag {
    reports.iter().map(|r| r.flag).max().unwrap_or(Flag::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(critic: &str, flag: Flag) -> CriticReport {
        CriticReport {
            flag,
            explanation: "x".into(),
            fix_hint: "y".into(),
            ..CriticReport::ok(critic, "")
        }
    }

    #[test]
    fn flag_order_and_points() {
        assert!(Flag::Ok < Flag::Warning && Flag::Warning < Flag::Error);
        assert_eq!(
            [Flag::Error, Flag::Warning, Flag::Ok].map(Flag::points),
            [0, 1, 2]
        );
        assert_eq!(serde_json::to_string(&Flag::Ok).unwrap(), "\"OK\"");
    }

    #[test]
    fn score_examples() {
        let all_ok: Vec<_> = BUILTIN_CRITICS
            .iter()
            .map(|c| report(c, Flag::Ok))
            .collect();
        assert_eq!(score_index(&all_ok).unwrap().total, 10);
        let mut one_warn = all_ok.clone();
        one_warn[2].flag = Flag::Warning;
        assert_eq!(score_index(&one_warn).unwrap().total, 9);
        let all_err: Vec<_> = BUILTIN_CRITICS
            .iter()
            .map(|c| report(c, Flag::Error))
            .collect();
        assert_eq!(score_index(&all_err).unwrap().total, 0);
    }

    #[test]
    fn score_needs_every_critic_once() {
        let mut r: Vec<_> = BUILTIN_CRITICS
            .iter()
            .map(|c| report(c, Flag::Ok))
            .collect();
        r.pop();
        assert!(matches!(
            score_index(&r),
            Err(CriticError::IncompleteReports { .. })
        ));
        r.push(report(COLLISION, Flag::Ok));
        assert!(matches!(
            score_index(&r),
            Err(CriticError::IncompleteReports { .. })
        ));
    }

    #[test]
    fn fix_message_format() {
        let r = CriticReport {
            flag: Flag::Error,
            explanation: "The gripper penetrates white_box.".into(),
            fix_hint: "Call avoid_collision(white_box).".into(),
            ..CriticReport::ok(COLLISION, "")
        };
        assert_eq!(
            fix_message(&r).unwrap(),
            "Error: The gripper penetrates white_box. Call avoid_collision(white_box)."
        );
        assert_eq!(
            fix_message(&CriticReport::ok(COLLISION, "fine")),
            Err(CriticError::NoViolation(COLLISION.into()))
        );
    }

    #[test]
    fn selection_parsing() {
        assert_eq!(parse_selection(""), all_critics());
        assert_eq!(parse_selection("all"), all_critics());
        let s = parse_selection("joint_speed, collision");
        assert_eq!(s.len(), 2);
        assert!(s.contains("collision"));
    }

    #[test]
    fn registry_order_and_replacement() {
        let mut reg = CriticRegistry::default();
        assert_eq!(reg.names(), BUILTIN_CRITICS.to_vec());
        reg.register_fn("gravity", &[], |_| Ok(CriticReport::ok("gravity", "fine")));
        reg.register_fn(COLLISION, &[], |_| Ok(CriticReport::ok(COLLISION, "stub")));
        assert_eq!(reg.names().len(), 6);
        assert_eq!(reg.names()[1], COLLISION);
        assert_eq!(reg.names()[5], "gravity");
    }
}
