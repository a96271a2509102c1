//! The run configuration file: one TOML document with `[model]`, `[train]`,
//! `[tracker]` and `[eval]` sections. Only `[model]` is required; the other
//! sections fall back to their defaults key by key.

use std::path::Path;

use anyhow::Context;
use dcff_core::ModelConfig;
use dcff_track::{OpeConfig, TrackerConfig};
use dcff_train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub eval: OpeConfig,
}

impl RunConfig {
    pub fn with_model(model: ModelConfig) -> Self {
        Self {
            model,
            train: TrainConfig::default(),
            tracker: TrackerConfig::default(),
            eval: OpeConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("reading config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let config = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.model.validate().map_err(|e| config(&e))?;
        self.train.validate().map_err(|e| config(&e))?;
        self.tracker.validate().map_err(|e| config(&e))?;
        self.eval.validate().map_err(|e| config(&e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        for model in [ModelConfig::reference(), ModelConfig::toy()] {
            let config = RunConfig::with_model(model);
            assert_eq!(RunConfig::parse(&config.to_toml()).unwrap(), config);
        }
    }

    #[test]
    fn typos_are_rejected() {
        let mut text = RunConfig::with_model(ModelConfig::toy()).to_toml();
        text = text.replace("window_influence", "window_influense");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn sections_other_than_model_are_optional() {
        let full = RunConfig::with_model(ModelConfig::toy());
        let mut table = toml::Table::new();
        table.insert("model".into(), toml::Value::try_from(&full.model).unwrap());
        assert_eq!(RunConfig::parse(&toml::to_string(&table).unwrap()).unwrap(), full);
    }
}
