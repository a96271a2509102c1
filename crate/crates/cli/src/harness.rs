//! Scaled experiments: a short overfit run on fixed synthetic pairs, and the
//! closed-loop comparison of the fusion ablations built on it.

use dcff_core::{Ablation, ModelConfig, ParamStore, Stage};
use dcff_track::{ope_evaluate, OpeResult, Tracker, TrackerConfig};
use dcff_train::data::{draw_pairs, SampleConfig};
use dcff_train::{Dataset, FrameSequence, HeadKind, StageSpec, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitProtocol {
    pub pairs: usize,
    pub steps: usize,
    pub lr: f64,
    /// Seed of the pair draw.
    pub pair_seed: u64,
    /// Seed of the parameter initialization.
    pub train_seed: u64,
}

impl Default for OverfitProtocol {
    fn default() -> Self {
        Self {
            pairs: 8,
            steps: 300,
            lr: 0.01,
            pair_seed: 2,
            train_seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OverfitRun {
    pub params: ParamStore,
    /// Batch loss before each step.
    pub history: Vec<f64>,
}

impl OverfitRun {
    pub fn initial_loss(&self) -> f64 {
        self.history[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.history.last().expect("at least one step")
    }
}

/// Number of consecutive `window`-step moving averages that go up.
pub fn moving_average_rises(history: &[f64], window: usize) -> usize {
    let ma: Vec<f64> = history
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    ma.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Trains the classification-regression network on the same few pairs
/// over and over, with momentum and weight decay at their defaults.
pub fn overfit(model: &ModelConfig, data: &Dataset, protocol: &OverfitProtocol) -> dcff_train::Result<OverfitRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.pair_seed);
    let pairs = draw_pairs(data, model, &SampleConfig::default(), protocol.pairs, &mut rng)?;
    let spec = StageSpec {
        name: "overfit".into(),
        stage: Stage::Pretrain,
        epochs: 1,
        lr: protocol.lr,
        head: HeadKind::Clsreg,
    };
    let config = TrainConfig {
        seed: protocol.train_seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model.clone(), config)?;
    for _ in 0..protocol.steps {
        trainer.step(&pairs, &spec)?;
    }
    Ok(OverfitRun {
        params: trainer.params,
        history: trainer.history,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub run: OverfitRun,
    pub result: OpeResult,
}

/// Overfits each ablation on `seq` and tracks `seq` from its first box.
pub fn ablation_study(
    base: &ModelConfig,
    ablations: &[Ablation],
    seq: &FrameSequence,
    protocol: &OverfitProtocol,
    tracker: TrackerConfig,
) -> anyhow::Result<Vec<AblationRow>> {
    let data = Dataset {
        sequences: vec![seq.clone()],
    };
    ablations
        .iter()
        .map(|&ablation| {
            let model = base.with_ablation(ablation);
            let run = overfit(&model, &data, protocol)?;
            let t = Tracker::new(model, run.params.clone(), tracker)?;
            let boxes = t.track(&seq.frames, &seq.groundtruth[0])?;
            let result = ope_evaluate(&boxes, &seq.groundtruth)?;
            log::info!(
                "{}: loss {:.4} -> {:.4}, mean IoU {:.3}, P@20 {:.3}",
                ablation.name(),
                run.initial_loss(),
                run.final_loss(),
                result.mean_iou,
                result.precision_at
            );
            Ok(AblationRow { ablation, run, result })
        })
        .collect()
}
