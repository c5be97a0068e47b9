//! Run configuration and its validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What to answer when the usable votes are tied or absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties resolve to "no": do not assert an object without a majority.
    #[default]
    ConservativeNo,
    OptimisticYes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    #[default]
    None,
    Jpeg,
    #[serde(rename = "featsq")]
    FeatSq,
}

impl FromStr for DefenseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(DefenseKind::None),
            "jpeg" => Ok(DefenseKind::Jpeg),
            "featsq" => Ok(DefenseKind::FeatSq),
            other => Err(format!("unknown defense '{other}'")),
        }
    }
}

impl fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefenseKind::None => "none",
            DefenseKind::Jpeg => "jpeg",
            DefenseKind::FeatSq => "featsq",
        })
    }
}

pub const DEFAULT_MAX_ITERATIONS: u32 = 3;
pub const DEFAULT_VOTE_THRESHOLD: u32 = 2;
pub const DEFAULT_ATTRIBUTE_CAP: usize = 2;
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_RETRIES: u32 = 1;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_iterations: u32,
    pub vote_threshold: u32,
    pub tie_policy: TiePolicy,
    pub defense: DefenseKind,
    /// Attribute questions asked per discovery round.
    pub attribute_cap: usize,
    pub default_timeout_ms: u64,
    pub default_max_retries: u32,
    /// Upper bound on concurrent requests inside one fan-out.
    pub max_in_flight: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            vote_threshold: DEFAULT_VOTE_THRESHOLD,
            tie_policy: TiePolicy::default(),
            defense: DefenseKind::default(),
            attribute_cap: DEFAULT_ATTRIBUTE_CAP,
            default_timeout_ms: DEFAULT_TIMEOUT_MS,
            default_max_retries: DEFAULT_MAX_RETRIES,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("iteration limit must be ≥ 1")]
    ZeroIterations,
    #[error("vote threshold must be ≥ 1")]
    ZeroVoteThreshold,
    #[error("vote threshold {threshold} exceeds the {fanout} models queried in discovery")]
    ThresholdExceedsFanout { threshold: u32, fanout: usize },
    #[error("max_in_flight must be ≥ 1")]
    ZeroInFlight,
    #[error("default timeout must be positive")]
    ZeroTimeout,
}

/// All violations found in one config, reported together.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid run config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl RunConfig {
    /// Checks every invariant against the number of models the run will
    /// query during discovery.
    pub fn validate(self, discovery_fanout: usize) -> Result<RunConfig, ConfigErrors> {
        let mut errors = Vec::new();
        if self.max_iterations == 0 {
            errors.push(ConfigError::ZeroIterations);
        }
        if self.vote_threshold == 0 {
            errors.push(ConfigError::ZeroVoteThreshold);
        } else if self.vote_threshold as usize > discovery_fanout {
            errors.push(ConfigError::ThresholdExceedsFanout {
                threshold: self.vote_threshold,
                fanout: discovery_fanout,
            });
        }
        if self.max_in_flight == 0 {
            errors.push(ConfigError::ZeroInFlight);
        }
        if self.default_timeout_ms == 0 {
            errors.push(ConfigError::ZeroTimeout);
        }
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(ConfigErrors(errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        let cfg = cfg.validate(3).unwrap();
        assert_eq!(cfg.max_iterations, 3);
        assert_eq!(cfg.vote_threshold, 2);
        assert_eq!(cfg.tie_policy, TiePolicy::ConservativeNo);
        assert_eq!(cfg.attribute_cap, 2);
    }

    #[test]
    fn zero_iterations_rejected() {
        let err = RunConfig {
            max_iterations: 0,
            ..RunConfig::default()
        }
        .validate(3)
        .unwrap_err();
        assert_eq!(err.0, vec![ConfigError::ZeroIterations]);
        assert_eq!(err.0[0].to_string(), "iteration limit must be ≥ 1");
    }

    #[test]
    fn threshold_above_fanout_rejected() {
        let err = RunConfig {
            vote_threshold: 4,
            ..RunConfig::default()
        }
        .validate(3)
        .unwrap_err();
        assert_eq!(
            err.0,
            vec![ConfigError::ThresholdExceedsFanout {
                threshold: 4,
                fanout: 3
            }]
        );
    }

    #[test]
    fn errors_accumulate() {
        let err = RunConfig {
            max_iterations: 0,
            vote_threshold: 9,
            ..RunConfig::default()
        }
        .validate(3)
        .unwrap_err();
        assert_eq!(err.0.len(), 2);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"max_iter": 2}"#).is_err());
    }
}
