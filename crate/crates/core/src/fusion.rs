//! Correlation-fusion: depthwise correlation of search features with template
//! features, resized back to the search map and added onto it.
//!
//! ```text
//! out = search ⊕ resize(depthwise_xcorr(search, template) · k, shape(search))
//! ```
//!
//! where `k = 1/(Ht·Wt)` when response scaling is on and 1 otherwise. The
//! operation owns no parameters, so enabling it never changes the parameter
//! table.

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::kernels;
use crate::tensor::Tensor;

/// Shapes and response range observed at one fusion tap.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTapReport {
    pub tap: String,
    pub response_shape: Vec<usize>,
    pub resized_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub response_min: f64,
    pub response_max: f64,
}

fn response_scale(template_shape: &[usize]) -> f64 {
    1.0 / (template_shape[1] * template_shape[2]) as f64
}

/// Graph form used by the backbone; gradients reach both inputs.
pub fn correlation_fusion_node(g: &mut Graph, search: NodeId, template: NodeId, scaling: bool) -> Result<NodeId> {
    let target = g.value(search).dims3()?;
    let scale = response_scale(g.value(template).shape());
    let mut response = g.depthwise_xcorr(search, template)?;
    if scaling {
        response = g.scale(response, scale);
    }
    let resized = g.resize(response, [target.0, target.1, target.2])?;
    g.add(search, resized)
}

/// Tensor form, returning the fused map and a diagnostic report.
pub fn correlation_fusion(
    tap: &str,
    search: &Tensor,
    template: &Tensor,
    scaling: bool,
) -> Result<(Tensor, FusionTapReport)> {
    let (c, h, w) = search.dims3()?;
    let mut response = kernels::depthwise_xcorr(search, template)?;
    if scaling {
        let k = response_scale(template.shape());
        response = response.map(|v| v * k);
    }
    let resized = kernels::resize_trilinear(&response, [c, h, w])?;
    let out = kernels::add(search, &resized)?;
    let (lo, hi) = response.min_max();
    let report = FusionTapReport {
        tap: tap.to_string(),
        response_shape: response.shape().to_vec(),
        resized_shape: resized.shape().to_vec(),
        output_shape: out.shape().to_vec(),
        response_min: lo,
        response_max: hi,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(shape: &[usize], phase: f64) -> Tensor {
        Tensor::from_fn(shape, |i| (i as f64 * 0.173 + phase).sin()).unwrap()
    }

    #[test]
    fn zero_template_leaves_search_untouched() {
        let s = wave(&[3, 9, 9], 0.0);
        let t = Tensor::zeros(&[3, 4, 4]).unwrap();
        for scaling in [true, false] {
            let (out, _) = correlation_fusion("t", &s, &t, scaling).unwrap();
            assert_eq!(out, s);
        }
    }

    #[test]
    fn reference_tap_shapes() {
        let s = Tensor::zeros(&[2, 87, 87]).unwrap();
        let t = Tensor::zeros(&[2, 23, 23]).unwrap();
        let (_, r) = correlation_fusion("after_conv3", &s, &t, true).unwrap();
        assert_eq!(r.response_shape, vec![2, 65, 65]);
        assert_eq!(r.resized_shape, vec![2, 87, 87]);
        assert_eq!(r.output_shape, vec![2, 87, 87]);
    }

    #[test]
    fn matches_hand_chained_kernels_bitwise() {
        let s = wave(&[3, 11, 10], 0.3);
        let t = wave(&[3, 4, 5], 1.1);
        for scaling in [true, false] {
            let mut r = kernels::depthwise_xcorr(&s, &t).unwrap();
            if scaling {
                let k = 1.0 / 20.0;
                r = r.map(|v| v * k);
            }
            let expect = kernels::add(&s, &kernels::resize_trilinear(&r, [3, 11, 10]).unwrap()).unwrap();
            let (out, _) = correlation_fusion("t", &s, &t, scaling).unwrap();
            assert_eq!(out, expect);

            let mut g = Graph::new();
            let (si, ti) = (g.input(s.clone()), g.input(t.clone()));
            let node = correlation_fusion_node(&mut g, si, ti, scaling).unwrap();
            assert_eq!(g.value(node), &expect);
        }
    }

    #[test]
    fn response_peaks_at_template_offset() {
        let t = wave(&[2, 3, 4], 0.5);
        let (dy, dx) = (5, 2);
        let mut s = Tensor::zeros(&[2, 12, 10]).unwrap();
        let (h, w) = (12, 10);
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    s.data_mut()[(c * h + y + dy) * w + x + dx] = t.at3(c, y, x);
                }
            }
        }
        let r = kernels::channel_sum(&kernels::depthwise_xcorr(&s, &t).unwrap()).unwrap();
        let (_, _, ow) = r.dims3().unwrap();
        let best = r.argmax();
        assert_eq!((best / ow, best % ow), (dy, dx));
    }
}
