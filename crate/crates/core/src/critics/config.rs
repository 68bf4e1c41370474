use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CriticError;

/// Thresholds shared by the built-in critics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    /// Recommended link speed, m/s.
    pub v_warn: f64,
    /// Maximum allowable link speed, m/s.
    pub v_max: f64,
    /// Gripper-object distance below which collision warns, m.
    pub d_warn: f64,
    /// Hull-to-workspace volume ratio above which space usage warns.
    pub space_warn_ratio: f64,
    /// Spearing score thresholds, m/s.
    pub score_warn: f64,
    pub score_err: f64,
    /// Link-pair clearance bounds for pinch points, m.
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            v_warn: 1.0,
            v_max: 2.0,
            d_warn: 0.05,
            space_warn_ratio: 0.5,
            score_warn: 0.5,
            score_err: 1.0,
            d_min: 0.02,
            d_max: 0.05,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<(), CriticError> {
        let bad = |m: &str| Err(CriticError::InvalidConfig(m.to_owned()));
        if self.as_map().values().any(|v| !v.is_finite()) {
            return bad("all thresholds must be finite");
        }
        if !(self.v_warn < self.v_max) {
            return bad("v_warn must be below v_max");
        }
        if !(self.d_min < self.d_max) {
            return bad("d_min must be below d_max");
        }
        if !(self.score_warn < self.score_err) {
            return bad("score_warn must be below score_err");
        }
        if !(self.space_warn_ratio > 0.0 && self.space_warn_ratio < 1.0) {
            return bad("space_warn_ratio must lie in (0, 1)");
        }
        if self.d_warn < 0.0 {
            return bad("d_warn must be non-negative");
        }
        Ok(())
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        [
            ("v_warn", self.v_warn),
            ("v_max", self.v_max),
            ("d_warn", self.d_warn),
            ("space_warn_ratio", self.space_warn_ratio),
            ("score_warn", self.score_warn),
            ("score_err", self.score_err),
            ("d_min", self.d_min),
            ("d_max", self.d_max),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    pub(crate) fn pick(&self, keys: &[&str]) -> BTreeMap<String, f64> {
        let all = self.as_map();
        keys.iter()
            .filter_map(|k| all.get(*k).map(|v| (k.to_string(), *v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        CriticConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_document_keeps_defaults() {
        let c: CriticConfig = serde_json::from_str(r#"{"v_warn": 0.8}"#).unwrap();
        assert_eq!(c.v_warn, 0.8);
        assert_eq!(c.v_max, 2.0);
    }

    #[test]
    fn inverted_thresholds_rejected() {
        let c = CriticConfig {
            d_min: 0.1,
            ..CriticConfig::default()
        };
        assert!(c.validate().is_err());
        let c = CriticConfig {
            space_warn_ratio: 1.5,
            ..CriticConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
