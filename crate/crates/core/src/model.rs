//! Whole-network parameter table, initialization and stage-wise freezing.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::heads;
use crate::params::{Init, ParamStore};

/// Training stage selecting the trainable set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::Config(format!(
                "unknown stage `{other}` (expected pretrain or finetune)"
            ))),
        }
    }
}

/// Every parameter of the network with its shape and initializer.
pub fn param_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = backbone::param_specs(config);
    specs.extend(heads::param_specs(config));
    specs
}

pub fn init_params(config: &ModelConfig, rng: &mut impl Rng) -> Result<ParamStore> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (name, shape, init) in param_specs(config) {
        store.declare(&name, &shape, init, rng)?;
    }
    Ok(store)
}

/// Layers left trainable when fine-tuning.
const FINETUNE_PREFIXES: [&str; 3] = ["conv5.", "conv6.", "head."];

pub fn is_finetune_trainable(name: &str) -> bool {
    FINETUNE_PREFIXES.iter().any(|p| name.starts_with(p))
}

/// Names of the trainable parameters for `stage`.
pub fn freeze_mask(config: &ModelConfig, stage: Stage) -> BTreeSet<String> {
    param_specs(config)
        .into_iter()
        .map(|(name, _, _)| name)
        .filter(|name| stage == Stage::Pretrain || is_finetune_trainable(name))
        .collect()
}
