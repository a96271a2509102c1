//! In-memory sequences and training-pair sampling.

use std::path::Path;

use dcff_core::bbox::BBox;
use dcff_core::config::ModelConfig;
use dcff_core::dataset;
use dcff_core::image::{self, CropTransform};
pub use dcff_core::image::{search_transform, template_transform};
use dcff_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

/// A sequence with every frame decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub name: String,
    pub frames: Vec<Tensor>,
    pub groundtruth: Vec<BBox>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<FrameSequence>,
}

impl Dataset {
    /// Loads a sequence directory, or every sequence below `root`.
    pub fn load(root: &Path) -> Result<Self> {
        let sequences = dataset::load_dataset(root)?
            .into_iter()
            .map(|seq| {
                let frames = (0..seq.len())
                    .map(|i| seq.frame(i))
                    .collect::<dcff_core::Result<Vec<_>>>()?;
                Ok(FrameSequence {
                    name: seq.name,
                    frames,
                    groundtruth: seq.groundtruth,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sequences })
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.iter().all(|s| s.frames.is_empty())
    }
}

/// Pair-sampling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Largest frame distance between template and search frames.
    pub max_frame_gap: usize,
    /// Uniform shift of the search crop center, in search-crop pixels.
    pub jitter_px: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            max_frame_gap: 100,
            jitter_px: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub template: Tensor,
    pub search: Tensor,
    /// Target box in search-crop coordinates.
    pub gt: BBox,
    /// `sequence:template_frame>search_frame`, for diagnostics.
    pub source: String,
}

/// Clips a box to `[0, size]²`.
pub fn clip_to_square(b: &BBox, size: f64) -> BBox {
    BBox {
        x0: b.x0.clamp(0.0, size),
        y0: b.y0.clamp(0.0, size),
        x1: b.x1.clamp(0.0, size),
        y1: b.y1.clamp(0.0, size),
    }
}

/// Draws one template/search pair. Returns `Ok(None)` when the drawn frames
/// carry a degenerate box, so the caller can count the skip and redraw.
pub fn sample_pair(
    data: &Dataset,
    model: &ModelConfig,
    cfg: &SampleConfig,
    rng: &mut impl Rng,
) -> Result<Option<TrainingSample>> {
    let usable: Vec<&FrameSequence> = data.sequences.iter().filter(|s| !s.frames.is_empty()).collect();
    if usable.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let seq = usable[rng.gen_range(0..usable.len())];
    let n = seq.frames.len();
    let a = rng.gen_range(0..n);
    let lo = a.saturating_sub(cfg.max_frame_gap);
    let hi = (a + cfg.max_frame_gap).min(n - 1);
    let b = rng.gen_range(lo..=hi);
    let (jx, jy) = if cfg.jitter_px > 0.0 {
        (
            rng.gen_range(-cfg.jitter_px..=cfg.jitter_px),
            rng.gen_range(-cfg.jitter_px..=cfg.jitter_px),
        )
    } else {
        (0.0, 0.0)
    };
    let (gt_a, gt_b) = (seq.groundtruth[a], seq.groundtruth[b]);
    if !(gt_a.area() > 0.0 && gt_b.area() > 0.0) {
        return Ok(None);
    }

    let zt = template_transform(&gt_a, model.template_size);
    let template = image::crop(&seq.frames[a], &zt, &image::channel_means(&seq.frames[a])?)?;

    let (cx, cy) = gt_b.center();
    let probe = search_transform(cx, cy, gt_b.width(), gt_b.height(), model);
    // shifting the crop window by +j moves the target by −j inside the crop
    let xt = CropTransform {
        cx: cx + jx / probe.scale(),
        cy: cy + jy / probe.scale(),
        ..probe
    };
    let search = image::crop(&seq.frames[b], &xt, &image::channel_means(&seq.frames[b])?)?;
    let gt = clip_to_square(&xt.box_to_crop(&gt_b), model.search_size as f64);
    if !(gt.area() > 0.0) {
        return Ok(None);
    }
    Ok(Some(TrainingSample {
        template,
        search,
        gt,
        source: format!("{}:{a}>{b}", seq.name),
    }))
}

/// Draws `n` non-degenerate pairs, giving up after 100 draws per pair.
pub fn draw_pairs(
    data: &Dataset,
    model: &ModelConfig,
    cfg: &SampleConfig,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        if draws == 100 * n {
            return Err(TrainError::NoValidSamples { attempts: draws });
        }
        draws += 1;
        if let Some(s) = sample_pair(data, model, cfg, rng)? {
            out.push(s);
        }
    }
    Ok(out)
}
