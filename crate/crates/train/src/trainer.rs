//! Deterministic staged training loop.

use std::collections::BTreeSet;

use dcff_core::autodiff::{clip_grad_norm, sgd_step, Graph, NodeId, OptimState, SgdConfig};
use dcff_core::backbone::{self, FusionInputs};
use dcff_core::config::{ModelConfig, Role};
use dcff_core::heads;
use dcff_core::{freeze_mask, init_params, ParamStore, Stage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::augment;
use crate::checkpoint::{Checkpoint, Cursor, RngState};
use crate::data::{sample_pair, Dataset, TrainingSample};
use crate::error::{Result, TrainError};
use crate::plan::{HeadKind, StageSpec, TrainConfig};

/// Redraws allowed per requested sample before giving up.
const MAX_DRAWS_PER_SAMPLE: usize = 100;

/// Builds the mean loss over `batch` in a fresh graph.
pub fn batch_loss(
    model: &ModelConfig,
    params: &ParamStore,
    batch: &[TrainingSample],
    head: HeadKind,
    config: &TrainConfig,
) -> Result<(Graph, NodeId)> {
    let geometry = model.head_geometry()?;
    let mut g = Graph::new();
    let mut losses = Vec::with_capacity(batch.len());
    for sample in batch {
        let z = g.input(sample.template.clone());
        let x = g.input(sample.search.clone());
        let t = backbone::forward_branch(&mut g, model, params, z, Role::Template, &FusionInputs::default())?;
        let s = backbone::forward_branch(&mut g, model, params, x, Role::Search, &FusionInputs::from(&t))?;
        let loss = match head {
            HeadKind::Similarity => {
                let response = heads::fc_response(&mut g, params, s.final_map, t.final_map)?;
                let (cx, cy) = sample.gt.center();
                let labels = heads::fc_labels_around(&geometry, cx, cy, config.label_radius)?;
                g.logistic_loss(response, labels)?
            }
            HeadKind::Clsreg => {
                let nodes = heads::clsreg_forward(&mut g, model, params, s.final_map, t.final_map)?;
                let targets = heads::assign_targets(&geometry, &sample.gt)?;
                heads::total_loss_node(&mut g, &nodes, &targets, config.balanced_cls)?.total
            }
        };
        losses.push(loss);
    }
    let mean = g.mean_of(&losses)?;
    Ok((g, mean))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub params: ParamStore,
    pub optim: OptimState,
    pub rng: ChaCha8Rng,
    pub cursor: Cursor,
    pub skipped: u64,
    pub history: Vec<f64>,
}

impl Trainer {
    /// Fresh parameters drawn from the config seed.
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params(&model, &mut rng)?;
        let optim = OptimState::new(
            SgdConfig {
                lr: config.stages[0].lr,
                momentum: config.momentum,
                weight_decay: config.weight_decay,
            },
            &params,
        );
        Ok(Self {
            model,
            config,
            params,
            optim,
            rng,
            cursor: Cursor::default(),
            skipped: 0,
            history: Vec::new(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: ck.model,
            config,
            params: ck.params,
            optim: ck.optim,
            rng: ck.rng.restore(),
            cursor: ck.cursor,
            skipped: ck.skipped,
            history: ck.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            params: self.params.clone(),
            optim: self.optim.clone(),
            rng: RngState::capture(&self.rng),
            cursor: self.cursor,
            skipped: self.skipped,
            history: self.history.clone(),
        }
    }

    pub fn finished(&self) -> bool {
        self.cursor.stage >= self.config.stages.len()
    }

    pub fn current_stage(&self) -> Result<&StageSpec> {
        self.config
            .stages
            .get(self.cursor.stage)
            .ok_or(TrainError::NoSuchStage {
                index: self.cursor.stage,
                len: self.config.stages.len(),
            })
    }

    /// Draws and augments one minibatch, redrawing degenerate samples.
    pub fn draw_batch(&mut self, data: &Dataset, stage: Stage) -> Result<Vec<TrainingSample>> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        let mut draws = 0;
        while batch.len() < self.config.batch_size {
            draws += 1;
            if draws > MAX_DRAWS_PER_SAMPLE * self.config.batch_size {
                return Err(TrainError::NoValidSamples { attempts: draws - 1 });
            }
            match sample_pair(data, &self.model, &self.config.sample, &mut self.rng)? {
                Some(s) => batch.push(augment(&s, &self.config.augment, stage, &mut self.rng)?),
                None => self.skipped += 1,
            }
        }
        Ok(batch)
    }

    /// One SGD step on `batch`; returns the mean loss before the update.
    pub fn step(&mut self, batch: &[TrainingSample], spec: &StageSpec) -> Result<f64> {
        let (g, loss) = batch_loss(&self.model, &self.params, batch, spec.head, &self.config)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                stage: spec.name.clone(),
                step: self.history.len(),
                loss: value,
                batch: batch.iter().map(|s| s.source.clone()).collect(),
            });
        }
        let mut grads = g.backward(loss)?;
        let trainable: BTreeSet<String> = freeze_mask(&self.model, spec.stage)
            .into_iter()
            .filter(|n| grads.contains_key(n))
            .collect();
        let norm = clip_grad_norm(&mut grads, Some(&trainable), self.config.grad_clip_norm);
        if !norm.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                stage: spec.name.clone(),
                step: self.history.len(),
                batch: batch.iter().map(|s| s.source.clone()).collect(),
            });
        }
        self.optim.config = SgdConfig {
            lr: spec.lr,
            momentum: self.config.momentum,
            weight_decay: self.config.weight_decay,
        };
        sgd_step(&mut self.params, &grads, &mut self.optim, Some(&trainable))?;
        self.history.push(value);
        Ok(value)
    }

    /// Runs the remaining steps of the current stage and advances the cursor.
    pub fn run_stage(&mut self, data: &Dataset) -> Result<()> {
        let spec = self.current_stage()?.clone();
        let steps = self.config.stage_steps(&spec);
        while self.cursor.step < steps {
            let batch = self.draw_batch(data, spec.stage)?;
            let loss = self.step(&batch, &spec)?;
            log::debug!("{} step {}/{steps}: loss {loss:.6}", spec.name, self.cursor.step + 1);
            self.cursor.step += 1;
        }
        log::info!(
            "finished stage `{}` ({steps} steps, last loss {:.6})",
            spec.name,
            self.history.last().copied().unwrap_or(f64::NAN)
        );
        self.cursor = Cursor {
            stage: self.cursor.stage + 1,
            step: 0,
        };
        Ok(())
    }

    pub fn run_all(&mut self, data: &Dataset) -> Result<()> {
        while !self.finished() {
            self.run_stage(data)?;
        }
        Ok(())
    }
}
