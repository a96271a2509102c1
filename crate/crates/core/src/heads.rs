//! Prediction heads and their targets.
//!
//! The similarity head scores template/search agreement with a full
//! cross-correlation plus a learned bias and is trained with the logistic
//! loss. The classification-regression head correlates the final maps
//! depthwise, then runs two conv towers: one producing 2-channel logits,
//! one producing (l, t, r, b) distances through `exp`. There is no
//! centerness branch.

use crate::autodiff::{Graph, NodeId};
use crate::backbone::conv_param_specs;
use crate::bbox::{BBox, RegVector};
use crate::config::{HeadGeometry, ModelConfig};
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::losses;
use crate::params::{Init, ParamStore};
use crate::tensor::Tensor;

pub const SIMILARITY_BIAS: &str = "sim.bias";

/// Head outputs in channels-first layout: `cls` is 2×H×W, `reg` is 4×H×W.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub cls: Tensor,
    pub reg: Tensor,
    pub stride: usize,
    pub offset: f64,
}

impl HeadOutput {
    pub fn extent(&self) -> (usize, usize) {
        (self.cls.shape()[1], self.cls.shape()[2])
    }

    /// Softmax probability of the target class at every location, 1×H×W.
    pub fn positive_scores(&self) -> Tensor {
        let (h, w) = self.extent();
        let d = self.cls.data();
        let plane = h * w;
        Tensor::from_fn(&[1, h, w], |i| losses::sigmoid(d[plane + i] - d[i])).expect("non-empty map")
    }

    pub fn reg_at(&self, index: usize) -> RegVector {
        let plane = self.reg.numel() / 4;
        let d = self.reg.data();
        RegVector::from_array([d[index], d[plane + index], d[2 * plane + index], d[3 * plane + index]])
    }
}

/// Graph nodes produced by [`clsreg_forward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClsRegNodes {
    pub response: NodeId,
    pub cls: NodeId,
    pub reg_logits: NodeId,
    pub reg: NodeId,
}

fn tower_layers(config: &ModelConfig, outputs: usize) -> (Vec<ConvSpec>, ConvSpec) {
    let k = config.head.kernel;
    let pad = k / 2;
    let mut ch = config.final_channels();
    let mut hidden = Vec::new();
    for _ in 0..config.head.tower_depth {
        hidden.push(ConvSpec::square(k, 1, pad, ch, config.head.tower_channels));
        ch = config.head.tower_channels;
    }
    (hidden, ConvSpec::square(k, 1, pad, ch, outputs))
}

/// Parameters of both heads.
pub fn param_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = vec![(SIMILARITY_BIAS.to_string(), vec![1], Init::Zeros)];
    for (branch, outputs) in [("cls", 2), ("reg", 4)] {
        let (hidden, last) = tower_layers(config, outputs);
        for (i, spec) in hidden.iter().enumerate() {
            conv_param_specs(&format!("head.{branch}.{i}"), spec, true, &mut out);
        }
        conv_param_specs(&format!("head.{branch}.out"), &last, false, &mut out);
    }
    // Start regressed distances near the half-extent of a typical target,
    // which fills about half of the template crop.
    let typical = (config.template_size as f64 / 4.0).max(1.0);
    for (name, _, init) in &mut out {
        if name == "head.reg.out.bias" {
            *init = Init::Constant(typical.ln());
        }
    }
    out
}

/// Similarity map: channel-summed valid cross-correlation plus the learned bias.
pub fn fc_response(g: &mut Graph, params: &ParamStore, search_final: NodeId, template_final: NodeId) -> Result<NodeId> {
    let b = g.param(SIMILARITY_BIAS, params.get(SIMILARITY_BIAS)?);
    let per_channel = g.depthwise_xcorr(search_final, template_final)?;
    let summed = g.channel_sum(per_channel)?;
    g.add_scalar(summed, b)
}

/// ±1 labels: +1 where a location lies within `radius_px` of the map center,
/// measured in search-image pixels.
pub fn fc_labels(height: usize, width: usize, stride: usize, radius_px: f64) -> Result<Tensor> {
    if radius_px < 0.0 || radius_px.is_nan() {
        return Err(Error::InvalidArgument(format!("label radius {radius_px} must be >= 0")));
    }
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    Tensor::from_fn(&[1, height, width], |i| {
        let (y, x) = ((i / width) as f64, (i % width) as f64);
        let dist = stride as f64 * (y - cy).hypot(x - cx);
        if dist <= radius_px {
            1.0
        } else {
            -1.0
        }
    })
}

/// ±1 labels around an arbitrary image point `(cx, cy)`, using the map's
/// location geometry. With the point at the map center this equals
/// [`fc_labels`].
pub fn fc_labels_around(geometry: &HeadGeometry, cx: f64, cy: f64, radius_px: f64) -> Result<Tensor> {
    if radius_px < 0.0 || radius_px.is_nan() {
        return Err(Error::InvalidArgument(format!("label radius {radius_px} must be >= 0")));
    }
    let w = geometry.width;
    Tensor::from_fn(&[1, geometry.height, w], |i| {
        let (px, py) = location_point(i % w, i / w, geometry.stride, geometry.offset);
        if (px - cx).hypot(py - cy) <= radius_px {
            1.0
        } else {
            -1.0
        }
    })
}

fn tower(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
    x: NodeId,
    hidden: &[ConvSpec],
    last: &ConvSpec,
) -> Result<NodeId> {
    let mut y = x;
    for (i, spec) in hidden.iter().enumerate() {
        y = crate::backbone::conv_unit(g, params, &format!("{prefix}.{i}"), y, spec, true)?;
    }
    let w = g.param(
        &format!("{prefix}.out.weight"),
        params.get(&format!("{prefix}.out.weight"))?,
    );
    let b = g.param(
        &format!("{prefix}.out.bias"),
        params.get(&format!("{prefix}.out.bias"))?,
    );
    g.conv2d(y, w, b, *last)
}

/// Classification-regression head on the final maps of both branches.
pub fn clsreg_forward(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ParamStore,
    search_final: NodeId,
    template_final: NodeId,
) -> Result<ClsRegNodes> {
    let mut response = g.depthwise_xcorr(search_final, template_final)?;
    if config.head_response_scaling {
        let t = g.value(template_final).shape();
        response = g.scale(response, 1.0 / (t[1] * t[2]) as f64);
    }
    let (cls_hidden, cls_last) = tower_layers(config, 2);
    let (reg_hidden, reg_last) = tower_layers(config, 4);
    let cls = tower(g, params, "head.cls", response, &cls_hidden, &cls_last)?;
    let reg_logits = tower(g, params, "head.reg", response, &reg_hidden, &reg_last)?;
    let reg = g.exp(reg_logits);
    Ok(ClsRegNodes {
        response,
        cls,
        reg_logits,
        reg,
    })
}

impl ClsRegNodes {
    pub fn output(&self, g: &Graph, geometry: &HeadGeometry) -> HeadOutput {
        HeadOutput {
            cls: g.value(self.cls).clone(),
            reg: g.value(self.reg).clone(),
            stride: geometry.stride,
            offset: geometry.offset,
        }
    }
}

/// Per-location classification labels and regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub positive: Vec<bool>,
    /// 4×H×W distances; zero at negative locations.
    pub reg: Tensor,
    /// Set when no location falls inside the box.
    pub no_positives: bool,
}

/// Image coordinates of map location `(x, y)`.
pub fn location_point(x: usize, y: usize, stride: usize, offset: f64) -> (f64, f64) {
    (offset + (stride * x) as f64, offset + (stride * y) as f64)
}

/// A location is positive when its image point lies inside `gt` (edges
/// included); positives regress the distances from that point to the edges.
pub fn assign_targets(geometry: &HeadGeometry, gt: &BBox) -> Result<Targets> {
    let (h, w) = (geometry.height, geometry.width);
    let plane = h * w;
    let mut positive = vec![false; plane];
    let mut reg = vec![0.0; 4 * plane];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = location_point(x, y, geometry.stride, geometry.offset);
            if gt.contains_point(px, py) {
                let i = y * w + x;
                positive[i] = true;
                for (k, d) in gt.distances_from(px, py).to_array().into_iter().enumerate() {
                    reg[k * plane + i] = d;
                }
            }
        }
    }
    let no_positives = !positive.iter().any(|&p| p);
    if no_positives {
        log::warn!("ground truth {gt:?} covers no response-map location");
    }
    Ok(Targets {
        positive,
        reg: Tensor::new(&[4, h, w], reg)?,
        no_positives,
    })
}

/// Inverse of the regression targets: box from a location and its distances.
pub fn decode_box(x: usize, y: usize, reg: RegVector, stride: usize, offset: f64) -> BBox {
    let (px, py) = location_point(x, y, stride, offset);
    BBox {
        x0: px - reg.l,
        y0: py - reg.t,
        x1: px + reg.r,
        y1: py + reg.b,
    }
}

/// Loss components of the classification-regression head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
    pub reg_skipped: bool,
}

/// `L_total = L_cls + L_reg` on plain tensors.
pub fn total_loss(cls: &Tensor, reg: &Tensor, targets: &Targets, balanced: bool) -> Result<LossBreakdown> {
    let l_cls = losses::softmax_cross_entropy(cls, &targets.positive, balanced)?;
    let l_reg = losses::iou_loss(reg, &targets.reg, &targets.positive)?;
    Ok(LossBreakdown {
        cls: l_cls,
        reg: l_reg.value,
        total: l_cls + l_reg.value,
        reg_skipped: l_reg.skipped,
    })
}

/// Graph nodes of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossNodes {
    pub cls: NodeId,
    pub reg: NodeId,
    pub total: NodeId,
}

pub fn total_loss_node(g: &mut Graph, nodes: &ClsRegNodes, targets: &Targets, balanced: bool) -> Result<LossNodes> {
    let cls = g.softmax_cross_entropy(nodes.cls, targets.positive.clone(), balanced)?;
    let reg = g.iou_loss(nodes.reg, targets.reg.clone(), targets.positive.clone())?;
    let total = g.add(cls, reg)?;
    Ok(LossNodes { cls, reg, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> HeadGeometry {
        HeadGeometry {
            height: 17,
            width: 17,
            stride: 4,
            offset: 0.0,
        }
    }

    #[test]
    fn scalar_template_scales_search() {
        let mut g = Graph::new();
        let mut params = ParamStore::new();
        params.insert(SIMILARITY_BIAS, Tensor::scalar(0.0));
        let s = g.input(Tensor::new(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
        let t = g.input(Tensor::new(&[1, 1, 1], vec![2.0]).unwrap());
        let r = fc_response(&mut g, &params, s, t).unwrap();
        let expect: Vec<f64> = (1..=9).map(|v| 2.0 * v as f64).collect();
        assert_eq!(g.value(r).data(), &expect[..]);

        let mut g2 = Graph::new();
        params.insert(SIMILARITY_BIAS, Tensor::scalar(-5.0));
        let s2 = g2.input(g.value(s).clone());
        let t2 = g2.input(g.value(t).clone());
        let r2 = fc_response(&mut g2, &params, s2, t2).unwrap();
        for (a, b) in g2.value(r2).data().iter().zip(&expect) {
            assert_eq!(*a, b - 5.0);
        }
    }

    #[test]
    fn label_radius_extremes() {
        let l = fc_labels(5, 5, 4, 0.0).unwrap();
        assert_eq!(l.data().iter().filter(|&&v| v > 0.0).count(), 1);
        assert_eq!(l.data()[12], 1.0);
        let even = fc_labels(4, 4, 4, 0.0).unwrap();
        assert!(even.data().iter().all(|&v| v == -1.0), "even maps have no exact center");
        let all = fc_labels(5, 5, 4, 100.0).unwrap();
        assert!(all.data().iter().all(|&v| v == 1.0));
        assert!(fc_labels(5, 5, 4, -1.0).is_err());
    }

    #[test]
    fn labels_form_discrete_disk() {
        let l = fc_labels(17, 17, 4, 16.0).unwrap();
        for y in 0..17i32 {
            for x in 0..17i32 {
                let inside = (y - 8) * (y - 8) + (x - 8) * (x - 8) <= 16;
                assert_eq!(l.data()[(y * 17 + x) as usize] > 0.0, inside, "({y},{x})");
            }
        }
    }

    #[test]
    fn labels_around_center_match_centered_labels() {
        let g = HeadGeometry {
            height: 9,
            width: 9,
            stride: 4,
            offset: 15.5,
        };
        let c = 15.5 + 4.0 * 4.0;
        assert_eq!(
            fc_labels_around(&g, c, c, 8.0).unwrap(),
            fc_labels(9, 9, 4, 8.0).unwrap()
        );
        let shifted = fc_labels_around(&g, c + 8.0, c, 0.0).unwrap();
        assert_eq!(shifted.argmax(), 4 * 9 + 6);
    }

    #[test]
    fn assignment_arithmetic() {
        let gt = BBox::new(10.0, 20.0, 50.0, 60.0);
        assert_eq!(
            gt.distances_from(30.0, 40.0),
            RegVector {
                l: 20.0,
                t: 20.0,
                r: 20.0,
                b: 20.0
            }
        );
        let g = HeadGeometry {
            height: 17,
            width: 17,
            stride: 5,
            offset: 0.0,
        };
        let targets = assign_targets(&g, &gt).unwrap();
        // location (6, 8) → (30, 40)
        let i = 8 * 17 + 6;
        assert!(targets.positive[i]);
        let plane = 17 * 17;
        let d = targets.reg.data();
        assert_eq!([d[i], d[plane + i], d[2 * plane + i], d[3 * plane + i]], [20.0; 4]);
        // location (1, 1) → (5, 5) lies outside
        assert!(!targets.positive[17 + 1]);
        assert_eq!(d[17 + 1], 0.0);
    }

    #[test]
    fn decode_inverts_example() {
        let b = decode_box(
            6,
            8,
            RegVector {
                l: 20.0,
                t: 20.0,
                r: 20.0,
                b: 20.0,
            },
            5,
            0.0,
        );
        assert_eq!(b, BBox::new(10.0, 20.0, 50.0, 60.0));
        let p = decode_box(
            6,
            8,
            RegVector {
                l: 0.0,
                t: 0.0,
                r: 0.0,
                b: 0.0,
            },
            5,
            0.0,
        );
        assert_eq!((p.x0, p.y0, p.area()), (30.0, 40.0, 0.0));
    }

    #[test]
    fn box_outside_grid_flags_no_positives() {
        let t = assign_targets(&geometry(), &BBox::new(500.0, 500.0, 510.0, 510.0)).unwrap();
        assert!(t.no_positives);
        assert!(t.positive.iter().all(|&p| !p));
    }
}
