//! One-pass evaluation: overlap success and center-error precision curves.
//!
//! Success at threshold `t` is the fraction of scored frames with
//! IoU ≥ `t` for `t = 0.00, 0.01, …, 1.00`; the AUC is the plain mean of
//! those 101 values. Precision at `d` is the fraction with center error
//! ≤ `d` pixels for `d = 0, 1, …, 50`. The first frame initializes the
//! tracker and is not scored.

use std::fmt::Write as _;

use dcff_core::BBox;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrackError};

/// Curve resolution and scoring conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeConfig {
    /// Evenly spaced IoU thresholds covering `[0, 1]` inclusive.
    pub success_bins: usize,
    /// Largest center-error threshold in pixels; thresholds step by 1.
    pub precision_max_px: usize,
    /// Threshold reported as the headline precision.
    pub precision_at_px: usize,
    /// Leave the initialization frame out of every curve.
    pub skip_first_frame: bool,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            success_bins: 101,
            precision_max_px: 50,
            precision_at_px: 20,
            skip_first_frame: true,
        }
    }
}

impl OpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.success_bins < 2 {
            return Err(TrackError::Config("success_bins must be at least 2".into()));
        }
        if self.precision_at_px > self.precision_max_px {
            return Err(TrackError::Config(format!(
                "precision_at_px {} exceeds precision_max_px {}",
                self.precision_at_px, self.precision_max_px
            )));
        }
        Ok(())
    }

    pub fn success_threshold(&self, i: usize) -> f64 {
        i as f64 / (self.success_bins - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpeResult {
    pub success: Vec<f64>,
    /// Indexed by center-error threshold in pixels.
    pub precision: Vec<f64>,
    pub auc: f64,
    /// Precision at the configured headline threshold (20 px by default).
    pub precision_at: f64,
    pub mean_iou: f64,
    pub frames_scored: usize,
}

/// Per-frame IoU and center error for the scored frames.
pub fn frame_errors(pred: &[BBox], gt: &[BBox], skip_first: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.len() != gt.len() {
        return Err(TrackError::LengthMismatch {
            predicted: pred.len(),
            groundtruth: gt.len(),
        });
    }
    let start = usize::from(skip_first);
    if pred.len() <= start {
        return Err(TrackError::Empty("no frames left to score"));
    }
    Ok(pred[start..]
        .iter()
        .zip(&gt[start..])
        .map(|(p, g)| (p.iou(g), p.center_distance(g)))
        .unzip())
}

/// Evaluation under the default conventions.
pub fn ope_evaluate(pred: &[BBox], gt: &[BBox]) -> Result<OpeResult> {
    ope_evaluate_with(&OpeConfig::default(), pred, gt)
}

pub fn ope_evaluate_with(config: &OpeConfig, pred: &[BBox], gt: &[BBox]) -> Result<OpeResult> {
    config.validate()?;
    let (ious, errors) = frame_errors(pred, gt, config.skip_first_frame)?;
    let n = ious.len() as f64;
    let success: Vec<f64> = (0..config.success_bins)
        .map(|i| {
            let t = config.success_threshold(i);
            ious.iter().filter(|&&v| v >= t).count() as f64 / n
        })
        .collect();
    let precision: Vec<f64> = (0..=config.precision_max_px)
        .map(|d| errors.iter().filter(|&&e| e <= d as f64).count() as f64 / n)
        .collect();
    Ok(OpeResult {
        auc: success.iter().sum::<f64>() / success.len() as f64,
        precision_at: precision[config.precision_at_px],
        mean_iou: ious.iter().sum::<f64>() / n,
        frames_scored: ious.len(),
        success,
        precision,
    })
}

impl OpeResult {
    /// Curve data as `curve,threshold,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("curve,threshold,value\n");
        let last = (self.success.len() - 1) as f64;
        for (i, v) in self.success.iter().enumerate() {
            let _ = writeln!(out, "success,{:.2},{v}", i as f64 / last);
        }
        for (d, v) in self.precision.iter().enumerate() {
            let _ = writeln!(out, "precision,{d},{v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_tracker_scores_one() {
        let gt: Vec<BBox> = (0..5).map(|i| BBox::new(i as f64, 0.0, i as f64 + 10.0, 8.0)).collect();
        let r = ope_evaluate(&gt, &gt).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.precision_at, 1.0);
        assert!(r.success.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disjoint_boxes_only_count_at_zero() {
        let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 4];
        let pred = vec![BBox::new(100.0, 0.0, 110.0, 10.0); 4];
        let r = ope_evaluate(&pred, &gt).unwrap();
        assert!((r.auc - 1.0 / 101.0).abs() < 1e-15);
        assert_eq!(r.precision_at, 0.0);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            ope_evaluate(&[b, b], &[b, b, b]),
            Err(TrackError::LengthMismatch { .. })
        ));
        assert!(ope_evaluate(&[b], &[b]).is_err());
    }

    #[test]
    fn first_frame_can_be_scored() {
        let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 2];
        let pred = vec![BBox::new(50.0, 0.0, 60.0, 10.0), gt[1]];
        let config = OpeConfig {
            skip_first_frame: false,
            ..OpeConfig::default()
        };
        let r = ope_evaluate_with(&config, &pred, &gt).unwrap();
        assert_eq!(r.frames_scored, 2);
        assert_eq!(r.precision_at, 0.5);
        assert_eq!(ope_evaluate(&pred, &gt).unwrap().precision_at, 1.0);
    }

    #[test]
    fn csv_has_one_row_per_bin() {
        let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 3];
        let csv = ope_evaluate(&gt, &gt).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 1 + 101 + 51);
        assert!(csv.contains("success,0.50,1\n"));
        assert!(csv.contains("precision,20,1\n"));
    }
}
