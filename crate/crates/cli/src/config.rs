//! Run configuration file for `glnet train`.

use std::fs;
use std::path::{Path, PathBuf};

use glnet_core::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Model and training settings plus optional default paths; command-line
/// flags take precedence over the paths. `seed` drives both parameter
/// initialisation and group sampling (it replaces `train.seed`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    /// Progress line on stderr every this many steps (0 disables).
    pub log_every: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        cfg.train.seed = cfg.seed;
        cfg.model.validate().map_err(|e| CliError::usage(format!("config {}: model: {e}", path.display())))?;
        cfg.train.validate().map_err(|e| CliError::usage(format!("config {}: train: {e}", path.display())))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.group_size, 5);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = serde_json::from_str::<RunConfig>(r#"{"train": {"lr": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("`lr`"), "{err}");
        let err = serde_json::from_str::<RunConfig>(r#"{"epochs": 3}"#).unwrap_err();
        assert!(err.to_string().contains("`epochs`"), "{err}");
    }
}
