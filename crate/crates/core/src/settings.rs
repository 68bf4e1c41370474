//! Flat key/value configuration covering critic thresholds and interpreter
//! parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critics::CriticConfig;
use crate::program::InterpreterConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Settings {
    #[serde(flatten)]
    pub critics: CriticConfig,
    #[serde(flatten)]
    pub interpreter: InterpreterConfig,
}

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("configuration line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

const INTERPRETER_KEYS: [&str; 6] = [
    "dt_sample_ms",
    "omega_nom",
    "grasp_tol",
    "clearance",
    "home",
    "initial_gripper_open",
];

impl Settings {
    /// Parses a flat JSON object. Missing keys keep their defaults; unknown
    /// keys are rejected.
    pub fn from_json_str(doc: &str) -> Result<Self, SettingsError> {
        let parse = |e: serde_json::Error| SettingsError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(doc).map_err(parse)?;
        let critic_keys = CriticConfig::default().as_map();
        if let Some(k) = map
            .keys()
            .find(|k| !critic_keys.contains_key(*k) && !INTERPRETER_KEYS.contains(&k.as_str()))
        {
            return Err(SettingsError::UnknownKey(k.clone()));
        }
        let s: Settings = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| SettingsError::Invalid(e.to_string()))?;
        s.critics
            .validate()
            .map_err(|e| SettingsError::Invalid(e.to_string()))?;
        Ok(s)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SettingsError> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|e| SettingsError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_keys_parse() {
        let s = Settings::from_json_str(r#"{"v_warn": 0.9, "omega_nom": 2.5}"#).unwrap();
        assert_eq!(s.critics.v_warn, 0.9);
        assert_eq!(s.interpreter.omega_nom, 2.5);
        assert_eq!(s.interpreter.dt_sample_ms, 50);
        assert_eq!(s.critics.d_max, 0.05);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            Settings::from_json_str(r#"{"vwarn": 1}"#),
            Err(SettingsError::UnknownKey(k)) if k == "vwarn"
        ));
    }

    #[test]
    fn invalid_thresholds_rejected() {
        assert!(matches!(
            Settings::from_json_str(r#"{"v_warn": 3.0}"#),
            Err(SettingsError::Invalid(_))
        ));
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(Settings::from_json_str("{}").unwrap(), Settings::default());
    }
}
