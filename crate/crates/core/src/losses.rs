//! Training objectives and their analytic gradients.
//!
//! Every loss here reduces to a single number; the `_grad` companions return
//! d(loss)/d(input) with the same shape as the differentiated input.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp on IoU so `−ln IoU` stays finite for non-overlapping boxes.
pub const IOU_EPS: f64 = 1e-7;

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_labels(response: &Tensor, labels: &Tensor) -> Result<()> {
    if response.shape() != labels.shape() {
        return Err(Error::mismatch("logistic_loss", response.shape(), labels.shape()));
    }
    if let Some(bad) = labels.data().iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidArgument(format!(
            "logistic label {bad} is not in {{-1, +1}}"
        )));
    }
    Ok(())
}

/// Mean over locations of `ln(1 + exp(−y·v))`.
pub fn logistic_loss(response: &Tensor, labels: &Tensor) -> Result<f64> {
    check_labels(response, labels)?;
    let n = response.numel() as f64;
    let total = response
        .data()
        .iter()
        .zip(labels.data())
        .fold(0.0, |acc, (&v, &y)| acc + softplus(-y * v));
    Ok(total / n)
}

pub fn logistic_loss_grad(response: &Tensor, labels: &Tensor) -> Result<Tensor> {
    check_labels(response, labels)?;
    let n = response.numel() as f64;
    response.zip_map(labels, "logistic_loss_grad", |v, y| -y * sigmoid(-y * v) / n)
}

fn ce_weights(positive: &[bool], balanced: bool) -> Vec<f64> {
    let n = positive.len() as f64;
    if !balanced {
        return vec![1.0 / n; positive.len()];
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = n - n_pos;
    // An absent class hands its half of the weight to the other one.
    let (wp, wn) = match (n_pos > 0.0, n_neg > 0.0) {
        (true, true) => (0.5 / n_pos, 0.5 / n_neg),
        (true, false) => (1.0 / n_pos, 0.0),
        _ => (0.0, 1.0 / n_neg),
    };
    positive.iter().map(|&p| if p { wp } else { wn }).collect()
}

fn check_logits(logits: &Tensor, positive: &[bool]) -> Result<usize> {
    let (c, h, w) = logits.dims3()?;
    if c != 2 || positive.len() != h * w {
        return Err(Error::mismatch(
            "softmax_cross_entropy",
            logits.shape(),
            &[2, positive.len()],
        ));
    }
    Ok(h * w)
}

/// Two-class softmax cross-entropy over a 2×H×W logit map.
///
/// Channel 0 scores background, channel 1 the target. With `balanced`, the
/// positive and negative locations each contribute half of the total weight.
pub fn softmax_cross_entropy(logits: &Tensor, positive: &[bool], balanced: bool) -> Result<f64> {
    let plane = check_logits(logits, positive)?;
    let d = logits.data();
    let weights = ce_weights(positive, balanced);
    let mut total = 0.0;
    for i in 0..plane {
        let (neg, pos) = (d[i], d[plane + i]);
        // −log softmax_y = softplus(other − own)
        let margin = if positive[i] { neg - pos } else { pos - neg };
        total += weights[i] * softplus(margin);
    }
    Ok(total)
}

pub fn softmax_cross_entropy_grad(logits: &Tensor, positive: &[bool], balanced: bool) -> Result<Tensor> {
    let plane = check_logits(logits, positive)?;
    let d = logits.data();
    let weights = ce_weights(positive, balanced);
    let mut g = vec![0.0; 2 * plane];
    for i in 0..plane {
        let (neg, pos) = (d[i], d[plane + i]);
        let margin = if positive[i] { neg - pos } else { pos - neg };
        let s = weights[i] * sigmoid(margin);
        let (own, other) = if positive[i] { (plane + i, i) } else { (i, plane + i) };
        g[own] = -s;
        g[other] = s;
    }
    Tensor::new(logits.shape(), g)
}

/// IoU of two boxes sharing an anchor point, each given by its distances
/// (left, top, right, bottom) from that point.
pub fn iou_from_distances(pred: [f64; 4], target: [f64; 4]) -> f64 {
    iou_parts(pred, target).iou
}

struct IouParts {
    iw: f64,
    ih: f64,
    inter: f64,
    union: f64,
    iou: f64,
}

fn iou_parts(p: [f64; 4], t: [f64; 4]) -> IouParts {
    let area_p = (p[0] + p[2]) * (p[1] + p[3]);
    let area_t = (t[0] + t[2]) * (t[1] + t[3]);
    let iw = (p[0].min(t[0]) + p[2].min(t[2])).max(0.0);
    let ih = (p[1].min(t[1]) + p[3].min(t[3])).max(0.0);
    let inter = iw * ih;
    let union = area_p + area_t - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    IouParts {
        iw,
        ih,
        inter,
        union,
        iou,
    }
}

/// Result of [`iou_loss`]; `skipped` is set when no location is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouLossValue {
    pub value: f64,
    pub skipped: bool,
}

fn check_fields(pred: &Tensor, target: &Tensor, positive: &[bool]) -> Result<usize> {
    let (c, h, w) = pred.dims3()?;
    if c != 4 || pred.shape() != target.shape() || positive.len() != h * w {
        return Err(Error::mismatch("iou_loss", pred.shape(), target.shape()));
    }
    Ok(h * w)
}

fn distances(field: &Tensor, plane: usize, i: usize) -> [f64; 4] {
    let d = field.data();
    [d[i], d[plane + i], d[2 * plane + i], d[3 * plane + i]]
}

/// Mean of `−ln IoU` over positive locations of two 4×H×W distance fields.
/// IoU is clamped to `[IOU_EPS, 1]`; with no positives the loss is 0.
pub fn iou_loss(pred: &Tensor, target: &Tensor, positive: &[bool]) -> Result<IouLossValue> {
    let plane = check_fields(pred, target, positive)?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Ok(IouLossValue {
            value: 0.0,
            skipped: true,
        });
    }
    let mut total = 0.0;
    for i in (0..plane).filter(|&i| positive[i]) {
        let iou = iou_from_distances(distances(pred, plane, i), distances(target, plane, i));
        total -= iou.clamp(IOU_EPS, 1.0).ln();
    }
    Ok(IouLossValue {
        value: total / n_pos as f64,
        skipped: false,
    })
}

pub fn iou_loss_grad(pred: &Tensor, target: &Tensor, positive: &[bool]) -> Result<Tensor> {
    let plane = check_fields(pred, target, positive)?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    let mut g = vec![0.0; 4 * plane];
    if n_pos == 0 {
        return Tensor::new(pred.shape(), g);
    }
    for i in (0..plane).filter(|&i| positive[i]) {
        let p = distances(pred, plane, i);
        let t = distances(target, plane, i);
        let parts = iou_parts(p, t);
        if parts.iou <= IOU_EPS || parts.union <= 0.0 {
            continue;
        }
        // d area_p: horizontal components scale with height and vice versa.
        let d_area = [p[1] + p[3], p[0] + p[2], p[1] + p[3], p[0] + p[2]];
        // Zero IoU was skipped above, so neither overlap extent is clamped here.
        let d_inter = [
            if p[0] < t[0] { parts.ih } else { 0.0 },
            if p[1] < t[1] { parts.iw } else { 0.0 },
            if p[2] < t[2] { parts.ih } else { 0.0 },
            if p[3] < t[3] { parts.iw } else { 0.0 },
        ];
        for k in 0..4 {
            let d_union = d_area[k] - d_inter[k];
            let d_iou = (d_inter[k] * parts.union - parts.inter * d_union) / (parts.union * parts.union);
            g[k * plane + i] = -d_iou / parts.iou / n_pos as f64;
        }
    }
    Tensor::new(pred.shape(), g)
}
