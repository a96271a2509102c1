//! Registry of finite-difference gradient checks covering every
//! differentiable op, every loss, and the composite modules built from them.
//!
//! Inputs are drawn from a fixed seed. Non-smooth points are avoided by the
//! sampling: ReLU inputs stay at least 0.1 away from zero and IoU-loss
//! predictions never tie with their targets on any side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradReport, Graph, NodeId};
use crate::backbone::{self, FusionInputs};
use crate::config::{BlockSpec, HeadSpec, ModelConfig, Role};
use crate::error::{Error, Result};
use crate::fusion;
use crate::heads::{self, Targets};
use crate::kernels::ConvSpec;
use crate::model;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Tolerance on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

pub struct GradCase {
    pub name: &'static str,
    pub run: fn() -> Result<GradReport>,
}

fn rng(salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x6772_6164 ^ salt)
}

fn uniform(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0)).expect("non-empty shape")
}

/// Values with magnitude in [0.1, 1], random sign.
fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .expect("non-empty shape")
}

/// Reduces a node to a scalar with fixed random weights so every output
/// element carries a distinct gradient.
fn project(g: &mut Graph, x: NodeId, salt: u64) -> Result<NodeId> {
    let w = uniform(g.value(x).shape(), &mut rng(salt ^ 0xabcd));
    g.dot(x, w)
}

fn conv2d() -> Result<GradReport> {
    let mut r = rng(1);
    let spec = ConvSpec::square(3, 2, 1, 2, 3);
    let inputs = [
        ("x", uniform(&[2, 7, 6], &mut r)),
        ("w", uniform(&spec.weight_shape(), &mut r)),
        ("b", uniform(&[3], &mut r)),
    ];
    grad_check("conv2d", &inputs, TOLERANCE, |g, ids| {
        let y = g.conv2d(ids[0], ids[1], ids[2], spec)?;
        project(g, y, 1)
    })
}

fn conv2d_rect() -> Result<GradReport> {
    let mut r = rng(2);
    let spec = ConvSpec {
        kernel_h: 3,
        kernel_w: 5,
        stride: 1,
        padding: 0,
        in_channels: 2,
        out_channels: 2,
    };
    let inputs = [
        ("x", uniform(&[2, 6, 8], &mut r)),
        ("w", uniform(&spec.weight_shape(), &mut r)),
        ("b", uniform(&[2], &mut r)),
    ];
    grad_check("conv2d_rect", &inputs, TOLERANCE, |g, ids| {
        let y = g.conv2d(ids[0], ids[1], ids[2], spec)?;
        project(g, y, 2)
    })
}

fn depthwise_xcorr() -> Result<GradReport> {
    let mut r = rng(3);
    let inputs = [
        ("search", uniform(&[3, 7, 6], &mut r)),
        ("template", uniform(&[3, 3, 2], &mut r)),
    ];
    grad_check("depthwise_xcorr", &inputs, TOLERANCE, |g, ids| {
        let y = g.depthwise_xcorr(ids[0], ids[1])?;
        project(g, y, 3)
    })
}

fn channel_sum() -> Result<GradReport> {
    let mut r = rng(4);
    grad_check(
        "channel_sum",
        &[("x", uniform(&[3, 4, 5], &mut r))],
        TOLERANCE,
        |g, ids| {
            let y = g.channel_sum(ids[0])?;
            project(g, y, 4)
        },
    )
}

fn add_scalar() -> Result<GradReport> {
    let mut r = rng(5);
    let inputs = [("x", uniform(&[1, 4, 4], &mut r)), ("b", uniform(&[1], &mut r))];
    grad_check("add_scalar", &inputs, TOLERANCE, |g, ids| {
        let y = g.add_scalar(ids[0], ids[1])?;
        project(g, y, 5)
    })
}

fn resize_up() -> Result<GradReport> {
    let mut r = rng(6);
    grad_check(
        "resize_up",
        &[("x", uniform(&[2, 3, 4], &mut r))],
        TOLERANCE,
        |g, ids| {
            let y = g.resize(ids[0], [3, 7, 9])?;
            project(g, y, 6)
        },
    )
}

fn resize_down() -> Result<GradReport> {
    let mut r = rng(7);
    grad_check(
        "resize_down",
        &[("x", uniform(&[2, 9, 8], &mut r))],
        TOLERANCE,
        |g, ids| {
            let y = g.resize(ids[0], [2, 4, 5])?;
            project(g, y, 7)
        },
    )
}

fn add() -> Result<GradReport> {
    let mut r = rng(8);
    let inputs = [("a", uniform(&[2, 3, 3], &mut r)), ("b", uniform(&[2, 3, 3], &mut r))];
    grad_check("add", &inputs, TOLERANCE, |g, ids| {
        let y = g.add(ids[0], ids[1])?;
        project(g, y, 8)
    })
}

fn relu() -> Result<GradReport> {
    let mut r = rng(9);
    grad_check(
        "relu",
        &[("x", away_from_zero(&[2, 4, 4], &mut r))],
        TOLERANCE,
        |g, ids| {
            let y = g.relu(ids[0]);
            project(g, y, 9)
        },
    )
}

fn scale_shift() -> Result<GradReport> {
    let mut r = rng(10);
    let inputs = [
        ("x", uniform(&[3, 4, 2], &mut r)),
        ("gamma", uniform(&[3], &mut r)),
        ("beta", uniform(&[3], &mut r)),
    ];
    grad_check("scale_shift", &inputs, TOLERANCE, |g, ids| {
        let y = g.scale_shift(ids[0], ids[1], ids[2])?;
        project(g, y, 10)
    })
}

fn scale() -> Result<GradReport> {
    let mut r = rng(11);
    grad_check("scale", &[("x", uniform(&[2, 3, 3], &mut r))], TOLERANCE, |g, ids| {
        let y = g.scale(ids[0], -0.37);
        project(g, y, 11)
    })
}

fn exp() -> Result<GradReport> {
    let mut r = rng(12);
    grad_check("exp", &[("x", uniform(&[4, 3, 3], &mut r))], TOLERANCE, |g, ids| {
        let y = g.exp(ids[0]);
        project(g, y, 12)
    })
}

fn sum_and_mean() -> Result<GradReport> {
    let mut r = rng(13);
    let inputs = [("a", uniform(&[2, 3, 3], &mut r)), ("b", uniform(&[1, 2, 2], &mut r))];
    grad_check("sum_mean_of", &inputs, TOLERANCE, |g, ids| {
        let a = g.exp(ids[0]);
        let sa = g.sum(a);
        let sb = g.sum(ids[1]);
        g.mean_of(&[sa, sb])
    })
}

fn logistic_loss() -> Result<GradReport> {
    let mut r = rng(14);
    let labels = heads::fc_labels(5, 5, 4, 5.0)?;
    let v = Tensor::from_fn(&[1, 5, 5], |_| r.gen_range(-3.0..3.0))?;
    grad_check("logistic_loss", &[("response", v)], TOLERANCE, move |g, ids| {
        g.logistic_loss(ids[0], labels.clone())
    })
}

fn labels(n: usize, r: &mut ChaCha8Rng) -> Vec<bool> {
    let mut v: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
    v[0] = true;
    v[n - 1] = false;
    v
}

fn softmax_ce_balanced() -> Result<GradReport> {
    let mut r = rng(15);
    let pos = labels(16, &mut r);
    let logits = Tensor::from_fn(&[2, 4, 4], |_| r.gen_range(-2.0..2.0))?;
    grad_check(
        "softmax_ce_balanced",
        &[("logits", logits)],
        TOLERANCE,
        move |g, ids| g.softmax_cross_entropy(ids[0], pos.clone(), true),
    )
}

fn softmax_ce_mean() -> Result<GradReport> {
    let mut r = rng(16);
    let pos = labels(16, &mut r);
    let logits = Tensor::from_fn(&[2, 4, 4], |_| r.gen_range(-2.0..2.0))?;
    grad_check("softmax_ce_mean", &[("logits", logits)], TOLERANCE, move |g, ids| {
        g.softmax_cross_entropy(ids[0], pos.clone(), false)
    })
}

fn iou_loss() -> Result<GradReport> {
    let mut r = rng(17);
    let pos = labels(9, &mut r);
    let target = Tensor::from_fn(&[4, 3, 3], |_| r.gen_range(1.0..3.0))?;
    let pred_raw: Vec<f64> = target
        .data()
        .iter()
        .map(|t| {
            let f: f64 = if r.gen_bool(0.5) {
                r.gen_range(0.5..0.8)
            } else {
                r.gen_range(1.25..1.6)
            };
            (t * f).ln()
        })
        .collect();
    let logits = Tensor::new(&[4, 3, 3], pred_raw)?;
    // differentiate through exp so the check covers the head's activation too
    grad_check("iou_loss", &[("reg_logits", logits)], TOLERANCE, move |g, ids| {
        let pred = g.exp(ids[0]);
        g.iou_loss(pred, target.clone(), pos.clone())
    })
}

fn correlation_fusion(scaling: bool, name: &'static str, salt: u64) -> Result<GradReport> {
    let mut r = rng(salt);
    let inputs = [
        ("search", uniform(&[2, 7, 7], &mut r)),
        ("template", uniform(&[2, 3, 3], &mut r)),
    ];
    grad_check(name, &inputs, TOLERANCE, move |g, ids| {
        let y = fusion::correlation_fusion_node(g, ids[0], ids[1], scaling)?;
        project(g, y, salt)
    })
}

fn cf_scaled() -> Result<GradReport> {
    correlation_fusion(true, "correlation_fusion", 18)
}

fn cf_raw() -> Result<GradReport> {
    correlation_fusion(false, "correlation_fusion_unscaled", 19)
}

/// Parameters are passed in as checked inputs; names are kept so the graph's
/// shared-leaf lookup reproduces the model's wiring.
fn check_params(
    op: &str,
    params: &ParamStore,
    build: impl Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
) -> Result<GradReport> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let inputs: Vec<(&str, Tensor)> = names
        .iter()
        .map(|n| (n.as_str(), params.get(n).unwrap().clone()))
        .collect();
    grad_check(op, &inputs, TOLERANCE, |g, ids| {
        let store: ParamStore = names
            .iter()
            .zip(ids)
            .map(|(n, &id)| (n.clone(), g.value(id).clone()))
            .collect();
        build(g, &store)
    })
}

fn bottleneck() -> Result<GradReport> {
    let block = BlockSpec {
        units: 1,
        mid_channels: 2,
        out_channels: 3,
        stride: 2,
    };
    let mut cfg = micro_config();
    cfg.block2 = block;
    let mut r = rng(20);
    let mut params = ParamStore::new();
    for (name, shape, init) in model::param_specs(&cfg) {
        if name.starts_with("block2.0.") {
            params.declare(&name, &shape, init, &mut r)?;
        }
    }
    randomize_affine(&mut params, &mut r);
    let x = uniform(&[2, 7, 7], &mut r);
    check_params("bottleneck", &params, move |g, p| {
        let xi = g.input(x.clone());
        let y = backbone::bottleneck_forward(g, p, "block2.0", xi, &block, 2)?;
        project(g, y, 20)
    })
}

fn randomize_affine(params: &mut ParamStore, r: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names {
        if n.ends_with(".beta") || n.ends_with(".bias") || n.ends_with(".gamma") {
            let t = params.get_mut(&n).expect("listed name");
            let base = if n.ends_with(".gamma") { 1.0 } else { 0.0 };
            for v in t.data_mut() {
                *v = base + r.gen_range(-0.2..0.2);
            }
        }
    }
}

/// Smallest geometry that still exercises every layer, both fusion taps and
/// the heads: search 23, template 15, two channels.
pub fn micro_config() -> ModelConfig {
    let c = ConvSpec::square;
    ModelConfig {
        template_size: 15,
        search_size: 23,
        conv1: c(3, 1, 0, 3, 2),
        conv2: c(3, 1, 0, 2, 2),
        conv3: c(3, 1, 0, 2, 2),
        block2: BlockSpec {
            units: 1,
            mid_channels: 1,
            out_channels: 2,
            stride: 2,
        },
        block3: BlockSpec {
            units: 1,
            mid_channels: 1,
            out_channels: 2,
            stride: 1,
        },
        conv4: c(3, 1, 0, 2, 2),
        conv5: c(3, 1, 1, 2, 2),
        conv6: c(3, 1, 1, 2, 2),
        head: HeadSpec {
            tower_depth: 1,
            tower_channels: 2,
            kernel: 3,
        },
        cf_first: true,
        cf_second: true,
        cf_response_scaling: true,
        head_response_scaling: true,
    }
}

fn micro_setup(salt: u64) -> Result<(ModelConfig, ParamStore, Tensor, Tensor)> {
    let cfg = micro_config();
    let mut r = rng(salt);
    let mut params = model::init_params(&cfg, &mut r)?;
    randomize_affine(&mut params, &mut r);
    let z = Tensor::from_fn(&[3, 15, 15], |_| r.gen_range(0.0..1.0))?;
    let x = Tensor::from_fn(&[3, 23, 23], |_| r.gen_range(0.0..1.0))?;
    Ok((cfg, params, z, x))
}

fn siamese_trunk(g: &mut Graph, cfg: &ModelConfig, p: &ParamStore, z: &Tensor, x: &Tensor) -> Result<(NodeId, NodeId)> {
    let zi = g.input(z.clone());
    let xi = g.input(x.clone());
    let t = backbone::forward_branch(g, cfg, p, zi, Role::Template, &FusionInputs::default())?;
    let s = backbone::forward_branch(g, cfg, p, xi, Role::Search, &FusionInputs::from(&t))?;
    Ok((s.final_map, t.final_map))
}

fn similarity_network() -> Result<GradReport> {
    let (cfg, mut params, z, x) = micro_setup(21)?;
    params.retain(|n| !n.starts_with("head."));
    let geo = cfg.head_geometry()?;
    let labels = heads::fc_labels(geo.height, geo.width, geo.stride, 4.0)?;
    check_params("network_similarity_cf_double", &params, move |g, p| {
        let (s, t) = siamese_trunk(g, &cfg, p, &z, &x)?;
        let resp = heads::fc_response(g, p, s, t)?;
        g.logistic_loss(resp, labels.clone())
    })
}

fn clsreg_network() -> Result<GradReport> {
    let (cfg, mut params, z, x) = micro_setup(22)?;
    params.retain(|n| n != heads::SIMILARITY_BIAS);
    let geo = cfg.head_geometry()?;
    let gt = crate::bbox::BBox::new(5.3, 6.1, 17.2, 16.4);
    let targets: Targets = heads::assign_targets(&geo, &gt)?;
    if targets.no_positives {
        return Err(Error::InvalidArgument(
            "clsreg gradient fixture has no positive locations".into(),
        ));
    }
    check_params("network_clsreg_cf_double", &params, move |g, p| {
        let (s, t) = siamese_trunk(g, &cfg, p, &z, &x)?;
        let nodes = heads::clsreg_forward(g, &cfg, p, s, t)?;
        Ok(heads::total_loss_node(g, &nodes, &targets, true)?.total)
    })
}

pub fn cases() -> Vec<GradCase> {
    macro_rules! case {
        ($name:literal, $f:ident) => {
            GradCase { name: $name, run: $f }
        };
    }
    vec![
        case!("conv2d", conv2d),
        case!("conv2d_rect", conv2d_rect),
        case!("depthwise_xcorr", depthwise_xcorr),
        case!("channel_sum", channel_sum),
        case!("add_scalar", add_scalar),
        case!("resize_up", resize_up),
        case!("resize_down", resize_down),
        case!("add", add),
        case!("relu", relu),
        case!("scale_shift", scale_shift),
        case!("scale", scale),
        case!("exp", exp),
        case!("sum_mean_of", sum_and_mean),
        case!("logistic_loss", logistic_loss),
        case!("softmax_ce_balanced", softmax_ce_balanced),
        case!("softmax_ce_mean", softmax_ce_mean),
        case!("iou_loss", iou_loss),
        case!("correlation_fusion", cf_scaled),
        case!("correlation_fusion_unscaled", cf_raw),
        case!("bottleneck", bottleneck),
        case!("network_similarity_cf_double", similarity_network),
        case!("network_clsreg_cf_double", clsreg_network),
    ]
}

/// Runs every case whose name contains `filter` (all when `None`).
pub fn run(filter: Option<&str>) -> Result<Vec<GradReport>> {
    cases()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.name.contains(f)))
        .map(|c| (c.run)())
        .collect()
}
