//! Modified ResNet-50 feature extractor: conv1–conv3, bottleneck blocks 2
//! and 3, conv4–conv6, with optional correlation-fusion after conv3 and
//! after block2 on the search branch.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId};
use crate::config::{BlockSpec, ModelConfig, Role};
use crate::error::{Error, Result};
use crate::fusion;
use crate::kernels::ConvSpec;
use crate::params::{Init, ParamStore};
use crate::tensor::Tensor;

/// Named feature taps of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tap {
    AfterConv3,
    AfterBlock2,
    Final,
}

impl Tap {
    pub fn name(self) -> &'static str {
        match self {
            Tap::AfterConv3 => "after_conv3",
            Tap::AfterBlock2 => "after_block2",
            Tap::Final => "final",
        }
    }
}

/// Tap tensors of one branch. Fusion taps are present iff enabled in the config.
#[derive(Debug, Clone, PartialEq)]
pub struct StagewiseFeatures {
    pub taps: BTreeMap<Tap, Tensor>,
}

impl StagewiseFeatures {
    pub fn get(&self, tap: Tap) -> Option<&Tensor> {
        self.taps.get(&tap)
    }
}

/// Graph nodes of one branch's taps. `after_conv3` and `after_block2` hold
/// the values before any fusion is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchNodes {
    pub after_conv3: NodeId,
    pub after_block2: NodeId,
    pub final_map: NodeId,
}

/// Template-branch tap nodes the search branch fuses with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionInputs {
    pub after_conv3: Option<NodeId>,
    pub after_block2: Option<NodeId>,
}

impl From<&BranchNodes> for FusionInputs {
    fn from(b: &BranchNodes) -> Self {
        Self {
            after_conv3: Some(b.after_conv3),
            after_block2: Some(b.after_block2),
        }
    }
}

impl BranchNodes {
    /// Collects tap tensors; fusion taps only when the config enables them.
    pub fn features(&self, g: &Graph, config: &ModelConfig) -> StagewiseFeatures {
        let mut taps = BTreeMap::new();
        if config.cf_first {
            taps.insert(Tap::AfterConv3, g.value(self.after_conv3).clone());
        }
        if config.cf_second {
            taps.insert(Tap::AfterBlock2, g.value(self.after_block2).clone());
        }
        taps.insert(Tap::Final, g.value(self.final_map).clone());
        StagewiseFeatures { taps }
    }
}

/// Names of the conv layers whose outputs skip the trailing ReLU.
const LINEAR_OUTPUT: &[&str] = &["conv6"];

pub(crate) fn conv_param_specs(prefix: &str, spec: &ConvSpec, affine: bool, out: &mut Vec<(String, Vec<usize>, Init)>) {
    let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
    out.push((
        format!("{prefix}.weight"),
        spec.weight_shape().to_vec(),
        Init::HeNormal { fan_in },
    ));
    out.push((format!("{prefix}.bias"), vec![spec.out_channels], Init::Zeros));
    if affine {
        out.push((format!("{prefix}.gamma"), vec![spec.out_channels], Init::Ones));
        out.push((format!("{prefix}.beta"), vec![spec.out_channels], Init::Zeros));
    }
}

/// Layers of one bottleneck unit: (name, spec) for reduce, mid, expand and
/// the optional projection shortcut.
fn unit_layers(in_channels: usize, block: &BlockSpec, stride: usize) -> Vec<(&'static str, ConvSpec)> {
    let mut layers = vec![
        ("reduce", ConvSpec::square(1, 1, 0, in_channels, block.mid_channels)),
        (
            "mid",
            ConvSpec::square(3, stride, 1, block.mid_channels, block.mid_channels),
        ),
        (
            "expand",
            ConvSpec::square(1, 1, 0, block.mid_channels, block.out_channels),
        ),
    ];
    if stride != 1 || in_channels != block.out_channels {
        layers.push((
            "shortcut",
            ConvSpec::square(1, stride, 0, in_channels, block.out_channels),
        ));
    }
    layers
}

fn block_units(config: &ModelConfig) -> Vec<(String, usize, BlockSpec, usize)> {
    let mut units = Vec::new();
    let mut in_ch = config.conv3.out_channels;
    for (name, block) in [("block2", config.block2), ("block3", config.block3)] {
        for u in 0..block.units {
            let stride = if u == 0 { block.stride } else { 1 };
            units.push((format!("{name}.{u}"), in_ch, block, stride));
            in_ch = block.out_channels;
        }
    }
    units
}

/// Parameter names, shapes and initializers of the backbone.
pub fn param_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    for (name, spec) in [
        ("conv1", &config.conv1),
        ("conv2", &config.conv2),
        ("conv3", &config.conv3),
    ] {
        conv_param_specs(name, spec, true, &mut out);
    }
    for (prefix, in_ch, block, stride) in block_units(config) {
        for (lname, spec) in unit_layers(in_ch, &block, stride) {
            conv_param_specs(&format!("{prefix}.{lname}"), &spec, true, &mut out);
        }
    }
    for (name, spec) in [
        ("conv4", &config.conv4),
        ("conv5", &config.conv5),
        ("conv6", &config.conv6),
    ] {
        conv_param_specs(name, spec, true, &mut out);
    }
    out
}

/// conv → per-channel affine → optional ReLU, with parameters under `prefix`.
pub fn conv_unit(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
    x: NodeId,
    spec: &ConvSpec,
    relu: bool,
) -> Result<NodeId> {
    let w = g.param(&format!("{prefix}.weight"), params.get(&format!("{prefix}.weight"))?);
    let b = g.param(&format!("{prefix}.bias"), params.get(&format!("{prefix}.bias"))?);
    let gamma = g.param(&format!("{prefix}.gamma"), params.get(&format!("{prefix}.gamma"))?);
    let beta = g.param(&format!("{prefix}.beta"), params.get(&format!("{prefix}.beta"))?);
    let y = g.conv2d(x, w, b, *spec)?;
    let y = g.scale_shift(y, gamma, beta)?;
    Ok(if relu { g.relu(y) } else { y })
}

/// One residual bottleneck unit:
/// `relu(shortcut(x) + expand(relu(mid(relu(reduce(x))))))`.
pub fn bottleneck_forward(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
    x: NodeId,
    block: &BlockSpec,
    stride: usize,
) -> Result<NodeId> {
    let in_ch = g.value(x).shape()[0];
    let layers = unit_layers(in_ch, block, stride);
    let mut y = x;
    for (name, spec) in &layers[..3] {
        y = conv_unit(g, params, &format!("{prefix}.{name}"), y, spec, *name != "expand")?;
    }
    let shortcut = match layers.get(3) {
        Some((name, spec)) => conv_unit(g, params, &format!("{prefix}.{name}"), x, spec, false)?,
        None => x,
    };
    let sum = g.add(shortcut, y)?;
    Ok(g.relu(sum))
}

/// Runs one branch. For the search role, every enabled fusion tap requires
/// the matching template node in `fusion`.
pub fn forward_branch(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ParamStore,
    image: NodeId,
    role: Role,
    fusion: &FusionInputs,
) -> Result<BranchNodes> {
    let size = config.input_size(role);
    let shape = g.value(image).shape().to_vec();
    if shape != [3, size, size] {
        return Err(Error::mismatch("forward_branch input", &shape, &[3, size, size]));
    }
    let fuse = role == Role::Search;

    let mut x = image;
    for (name, spec) in [
        ("conv1", &config.conv1),
        ("conv2", &config.conv2),
        ("conv3", &config.conv3),
    ] {
        x = conv_unit(g, params, name, x, spec, true)?;
    }
    let after_conv3 = x;
    if fuse && config.cf_first {
        let t = fusion.after_conv3.ok_or_else(|| {
            Error::InvalidArgument("cf_first is set but no after_conv3 template tap was supplied".into())
        })?;
        x = fusion::correlation_fusion_node(g, x, t, config.cf_response_scaling)?;
    }

    let units = block_units(config);
    let mut after_block2 = x;
    for (prefix, _, block, stride) in &units {
        x = bottleneck_forward(g, params, prefix, x, block, *stride)?;
        if prefix == &format!("block2.{}", config.block2.units - 1) {
            after_block2 = x;
            if fuse && config.cf_second {
                let t = fusion.after_block2.ok_or_else(|| {
                    Error::InvalidArgument("cf_second is set but no after_block2 template tap was supplied".into())
                })?;
                x = fusion::correlation_fusion_node(g, x, t, config.cf_response_scaling)?;
            }
        }
    }

    for (name, spec) in [
        ("conv4", &config.conv4),
        ("conv5", &config.conv5),
        ("conv6", &config.conv6),
    ] {
        x = conv_unit(g, params, name, x, spec, !LINEAR_OUTPUT.contains(&name))?;
    }
    Ok(BranchNodes {
        after_conv3,
        after_block2,
        final_map: x,
    })
}

/// Template features computed outside any training graph (tracker init).
pub fn template_features(config: &ModelConfig, params: &ParamStore, image: &Tensor) -> Result<StagewiseFeatures> {
    let mut g = Graph::new();
    let x = g.input(image.clone());
    let nodes = forward_branch(&mut g, config, params, x, Role::Template, &FusionInputs::default())?;
    Ok(nodes.features(&g, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels;
    use crate::model::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_params(in_ch: usize, block: &BlockSpec, stride: usize, zero: bool) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut specs = Vec::new();
        for (name, spec) in unit_layers(in_ch, block, stride) {
            conv_param_specs(&format!("u.{name}"), &spec, true, &mut specs);
        }
        let mut p = ParamStore::new();
        for (name, shape, init) in specs {
            let init = if zero && matches!(init, Init::HeNormal { .. }) {
                Init::Zeros
            } else {
                init
            };
            p.declare(&name, &shape, init, &mut rng).unwrap();
        }
        p
    }

    #[test]
    fn zero_residual_path_reduces_to_relu() {
        let block = BlockSpec {
            units: 1,
            mid_channels: 2,
            out_channels: 3,
            stride: 1,
        };
        let params = unit_params(3, &block, 1, true);
        let mut g = Graph::new();
        let x = Tensor::from_fn(&[3, 4, 4], |i| (i as f64 * 0.37).sin()).unwrap();
        let xi = g.input(x.clone());
        let y = bottleneck_forward(&mut g, &params, "u", xi, &block, 1).unwrap();
        assert_eq!(g.value(y), &kernels::relu(&x));
    }

    #[test]
    fn strided_unit_halves_extent() {
        let block = BlockSpec {
            units: 1,
            mid_channels: 2,
            out_channels: 4,
            stride: 2,
        };
        let params = unit_params(2, &block, 2, false);
        let mut g = Graph::new();
        let xi = g.input(Tensor::ones(&[2, 87, 87]).unwrap());
        let y = bottleneck_forward(&mut g, &params, "u", xi, &block, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 44, 44]);
    }

    #[test]
    fn missing_fusion_input_is_rejected() {
        let cfg = ModelConfig::toy();
        let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[3, 63, 63]).unwrap());
        let err = forward_branch(&mut g, &cfg, &params, x, Role::Search, &FusionInputs::default());
        assert!(err.is_err());
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let cfg = ModelConfig::toy();
        let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[3, 63, 63]).unwrap());
        assert!(forward_branch(&mut g, &cfg, &params, x, Role::Template, &FusionInputs::default()).is_err());
    }
}
