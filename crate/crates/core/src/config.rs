//! TOML run configuration with `[train]`, `[world]` and `[eval]` tables.
//! Every key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::eval::EvalConfig;
use crate::env::WorldConfig;
use crate::scalarize::Priorities;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub train: TrainConfig,
    pub world: WorldConfig,
    pub eval: EvalConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate()?;
        self.world.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for p in &self.eval.priorities {
            Priorities::new(p.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.eval.episodes == 0 {
            return Err(ConfigError::Invalid("eval.episodes must be at least 1".into()));
        }
        Ok(())
    }

    /// The fully resolved configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
