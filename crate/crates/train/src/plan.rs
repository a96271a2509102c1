//! Staged schedule and training hyperparameters.

use dcff_core::Stage;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::SampleConfig;
use crate::error::{Result, TrainError};

/// Which head produces the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Cross-correlation score map with the logistic loss.
    Similarity,
    /// Classification and box regression with cross-entropy plus IoU loss.
    Clsreg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub stage: Stage,
    /// Full-scale epoch count; divided by the config's epoch divisor.
    pub epochs: usize,
    pub lr: f64,
    pub head: HeadKind,
}

impl StageSpec {
    fn new(name: &str, stage: Stage, epochs: usize, lr: f64, head: HeadKind) -> Self {
        Self {
            name: name.to_string(),
            stage,
            epochs,
            lr,
            head,
        }
    }
}

/// Pretraining of the similarity network, then three fine-tuning stages of
/// the classification-regression network with decaying learning rates.
pub fn default_plan() -> Vec<StageSpec> {
    vec![
        StageSpec::new("pretrain", Stage::Pretrain, 150, 0.01, HeadKind::Similarity),
        StageSpec::new("finetune-1", Stage::Finetune, 150, 0.01, HeadKind::Clsreg),
        StageSpec::new("finetune-2", Stage::Finetune, 100, 0.001, HeadKind::Clsreg),
        StageSpec::new("finetune-3", Stage::Finetune, 50, 0.0001, HeadKind::Clsreg),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Full-scale epochs are divided by this (rounded up, at least one).
    pub epoch_divisor: usize,
    /// Minibatches per desk-scale epoch.
    pub steps_per_epoch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Joint L2 bound on the trainable gradients per step; 0 disables.
    pub grad_clip_norm: f64,
    /// Radius of the positive disk for similarity labels, search pixels.
    pub label_radius: f64,
    /// Class-balanced cross-entropy (half weight to each class).
    pub balanced_cls: bool,
    pub sample: SampleConfig,
    pub augment: AugmentConfig,
    pub stages: Vec<StageSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 8,
            epoch_divisor: 50,
            steps_per_epoch: 10,
            momentum: 0.9,
            weight_decay: 0.0005,
            grad_clip_norm: 10.0,
            label_radius: 16.0,
            balanced_cls: true,
            sample: SampleConfig::default(),
            augment: AugmentConfig::default(),
            stages: default_plan(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be > 0");
        }
        if self.epoch_divisor == 0 || self.steps_per_epoch == 0 {
            return bad("epoch_divisor and steps_per_epoch must be > 0");
        }
        if self.stages.is_empty() {
            return bad("the plan needs at least one stage");
        }
        for s in &self.stages {
            if s.epochs == 0 {
                return Err(TrainError::Config(format!("stage `{}` has zero epochs", s.name)));
            }
            if !(s.lr >= 0.0 && s.lr.is_finite()) {
                return Err(TrainError::Config(format!(
                    "stage `{}` has invalid lr {}",
                    s.name, s.lr
                )));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay >= 0");
        }
        if !(self.grad_clip_norm >= 0.0 && self.grad_clip_norm.is_finite()) {
            return bad("grad_clip_norm must be finite and >= 0");
        }
        if self.augment.scale_min <= 0.0 || self.augment.scale_min > self.augment.scale_max {
            return bad("augment scale range must satisfy 0 < scale_min <= scale_max");
        }
        Ok(())
    }

    pub fn desk_epochs(&self, stage: &StageSpec) -> usize {
        stage.epochs.div_ceil(self.epoch_divisor).max(1)
    }

    /// Optimizer steps in a stage at desk scale.
    pub fn stage_steps(&self, stage: &StageSpec) -> usize {
        self.desk_epochs(stage) * self.steps_per_epoch
    }
}
