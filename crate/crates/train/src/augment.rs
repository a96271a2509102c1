//! Pretraining augmentations: grayscale, horizontal flip, translation and
//! scale. Fine-tuning stages pass samples through untouched and draw nothing
//! from the RNG.

use dcff_core::bbox::BBox;
use dcff_core::image::{self, CropTransform};
use dcff_core::{Stage, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{clip_to_square, TrainingSample};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub grayscale_prob: f64,
    pub flip_prob: f64,
    /// Largest search-image translation per axis, in pixels.
    pub max_translate_px: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            grayscale_prob: 0.25,
            flip_prob: 0.5,
            max_translate_px: 8.0,
            scale_min: 0.95,
            scale_max: 1.05,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn off() -> Self {
        Self {
            grayscale_prob: 0.0,
            flip_prob: 0.0,
            max_translate_px: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
        }
    }
}

/// Luminance replicated over the three channels.
pub fn grayscale(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Ok(img.clone());
    }
    let plane = h * w;
    let d = img.data();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let p = i % plane;
        0.299 * d[p] + 0.587 * d[plane + p] + 0.114 * d[2 * plane + p]
    })?)
}

/// Mirrors columns: pixel `x` moves to `W−1−x`.
pub fn hflip(img: &Tensor) -> Result<Tensor> {
    let (_, _, w) = img.dims3()?;
    let d = img.data();
    Ok(Tensor::from_fn(img.shape(), |i| {
        let (row, x) = (i / w, i % w);
        d[row * w + (w - 1 - x)]
    })?)
}

/// Reflects a box about the vertical center line of a `width`-wide image.
pub fn hflip_box(b: &BBox, width: f64) -> BBox {
    BBox {
        x0: width - b.x1,
        y0: b.y0,
        x1: width - b.x0,
        y1: b.y1,
    }
}

/// Scales about the image center by `s`, then translates by `(tx, ty)`.
pub fn translate_scale(img: &Tensor, tx: f64, ty: f64, s: f64) -> Result<(Tensor, CropTransform)> {
    let (_, h, w) = img.dims3()?;
    let size = w;
    let c = size as f64 / 2.0;
    debug_assert_eq!(h, w);
    let t = CropTransform {
        cx: c - tx / s,
        cy: c - ty / s,
        side: size as f64 / s,
        size,
    };
    Ok((image::crop(img, &t, &image::channel_means(img)?)?, t))
}

pub fn augment(
    sample: &TrainingSample,
    cfg: &AugmentConfig,
    stage: Stage,
    rng: &mut impl Rng,
) -> Result<TrainingSample> {
    if stage == Stage::Finetune {
        return Ok(sample.clone());
    }
    let gray = rng.gen_bool(cfg.grayscale_prob.clamp(0.0, 1.0));
    let flip = rng.gen_bool(cfg.flip_prob.clamp(0.0, 1.0));
    let t = cfg.max_translate_px.max(0.0);
    let (tx, ty) = (rng.gen_range(-t..=t), rng.gen_range(-t..=t));
    let s = if cfg.scale_max > cfg.scale_min {
        rng.gen_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    };

    let mut out = sample.clone();
    if gray {
        out.template = grayscale(&out.template)?;
        out.search = grayscale(&out.search)?;
    }
    if flip {
        out.template = hflip(&out.template)?;
        out.search = hflip(&out.search)?;
        out.gt = hflip_box(&out.gt, out.search.shape()[2] as f64);
    }
    if tx != 0.0 || ty != 0.0 || s != 1.0 {
        let size = out.search.shape()[2] as f64;
        let c = size / 2.0;
        // keep the transformed box inside the image
        let scaled = BBox {
            x0: (out.gt.x0 - c) * s + c,
            y0: (out.gt.y0 - c) * s + c,
            x1: (out.gt.x1 - c) * s + c,
            y1: (out.gt.y1 - c) * s + c,
        };
        let clamp = |v: f64, lo: f64, hi: f64| if lo <= hi { v.clamp(lo, hi) } else { 0.0 };
        let tx = clamp(tx, -scaled.x0, size - scaled.x1);
        let ty = clamp(ty, -scaled.y0, size - scaled.y1);
        let (img, tr) = translate_scale(&out.search, tx, ty, s)?;
        out.search = img;
        out.gt = clip_to_square(&tr.box_to_crop(&out.gt), size);
    }
    Ok(out)
}
