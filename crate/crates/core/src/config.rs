//! Run configuration, loaded from TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cot::ParseOptions;
use crate::eval::ScoreConfig;
use crate::pipeline::backend::BackendConfig;
use crate::pipeline::PipelineConfig;
use crate::psa::PsaConfig;
use crate::reward::{default_thresholds, KlReduction};
use crate::sim::dataset::DatasetConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the format reward.
    pub w_format: f64,
    /// Weight of the accuracy reward.
    pub w_accuracy: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub group_size: usize,
    pub mra_thresholds: Vec<f64>,
    pub kl_reduction: KlReduction,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_format: 0.2,
            w_accuracy: 0.8,
            epsilon: 0.2,
            beta: 1e-4,
            group_size: 8,
            mra_thresholds: default_thresholds(),
            kl_reduction: KlReduction::Mean,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub simulator: DatasetConfig,
    pub psa: PsaConfig,
    pub cot: ParseOptions,
    pub reward: RewardConfig,
    pub score: ScoreConfig,
    pub pipeline: PipelineConfig,
    pub backend: BackendConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.simulator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.psa.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.cot.markers.validate().map_err(ConfigError::Invalid)?;
        self.pipeline.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let r = &self.reward;
        if !(r.w_format >= 0.0 && r.w_accuracy >= 0.0 && r.w_format + r.w_accuracy > 0.0) {
            return invalid("reward weights must be non-negative and not both zero".into());
        }
        if !(r.epsilon > 0.0 && r.epsilon < 1.0) {
            return invalid(format!("epsilon {} must lie in (0, 1)", r.epsilon));
        }
        if !(r.beta >= 0.0 && r.beta.is_finite()) {
            return invalid(format!("beta {} must be a non-negative number", r.beta));
        }
        if r.group_size < 2 {
            return invalid("group_size must be at least 2".into());
        }
        for thresholds in [&r.mra_thresholds, &self.score.thresholds] {
            if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                return invalid("MRA thresholds must be non-empty and lie in (0, 1]".into());
            }
        }
        Ok(())
    }
}
