//! Network geometry and wiring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{output_extent, ConvSpec};

/// A stack of ResNet bottleneck units. Only the first unit may stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub units: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

/// Classification/regression towers on top of the final correlation map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    /// Hidden conv+affine+relu layers in each tower.
    pub tower_depth: usize,
    pub tower_channels: usize,
    /// Odd kernel of every head conv; padding keeps the map size.
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Template,
    Search,
}

/// Which correlation-fusion taps are wired in (the four ablation rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    CfFirst,
    CfSecond,
    CfDouble,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Baseline,
        Ablation::CfFirst,
        Ablation::CfSecond,
        Ablation::CfDouble,
    ];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Ablation::Baseline => (false, false),
            Ablation::CfFirst => (true, false),
            Ablation::CfSecond => (false, true),
            Ablation::CfDouble => (true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::CfFirst => "cf-1st",
            Ablation::CfSecond => "cf-2nd",
            Ablation::CfDouble => "cf-double",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub template_size: usize,
    pub search_size: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub conv3: ConvSpec,
    pub block2: BlockSpec,
    pub block3: BlockSpec,
    pub conv4: ConvSpec,
    pub conv5: ConvSpec,
    pub conv6: ConvSpec,
    pub head: HeadSpec,
    /// Fuse between conv3 and block2.
    pub cf_first: bool,
    /// Fuse between block2 and conv4.
    pub cf_second: bool,
    /// Divide fusion responses by the template's spatial area.
    pub cf_response_scaling: bool,
    /// Divide the head's correlation map by the template's spatial area.
    pub head_response_scaling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Spatial map from response-map indices to search-image pixel coordinates:
/// location `i` sits at `offset + stride·i` (continuous coordinates, pixel
/// `k` covering `[k, k+1)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadGeometry {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub offset: f64,
}

/// Per-layer output shapes of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTable {
    pub rows: Vec<(String, [usize; 3])>,
}

impl ShapeTable {
    pub fn get(&self, name: &str) -> Option<[usize; 3]> {
        self.rows.iter().find(|(n, _)| n == name).map(|&(_, s)| s)
    }
}

impl ModelConfig {
    /// Full-size geometry: 255 → 87 at the first fusion tap, 44 at the second.
    pub fn reference() -> Self {
        let c = ConvSpec::square;
        Self {
            template_size: 127,
            search_size: 255,
            conv1: c(11, 2, 0, 3, 32),
            conv2: c(19, 1, 0, 32, 64),
            conv3: c(19, 1, 0, 64, 96),
            block2: BlockSpec {
                units: 3,
                mid_channels: 64,
                out_channels: 256,
                stride: 2,
            },
            block3: BlockSpec {
                units: 4,
                mid_channels: 128,
                out_channels: 512,
                stride: 1,
            },
            conv4: c(3, 1, 0, 512, 512),
            conv5: c(3, 1, 0, 512, 512),
            conv6: c(3, 1, 0, 512, 512),
            head: HeadSpec {
                tower_depth: 1,
                tower_channels: 512,
                kernel: 3,
            },
            cf_first: true,
            cf_second: true,
            cf_response_scaling: true,
            head_response_scaling: true,
        }
    }

    /// Small geometry for gradient checks, overfit runs and closed-loop tests.
    pub fn toy() -> Self {
        let c = ConvSpec::square;
        Self {
            template_size: 31,
            search_size: 63,
            conv1: c(3, 2, 0, 3, 8),
            conv2: c(3, 1, 0, 8, 8),
            conv3: c(3, 1, 0, 8, 8),
            block2: BlockSpec {
                units: 1,
                mid_channels: 4,
                out_channels: 8,
                stride: 2,
            },
            block3: BlockSpec {
                units: 1,
                mid_channels: 4,
                out_channels: 8,
                stride: 1,
            },
            conv4: c(3, 1, 0, 8, 8),
            conv5: c(3, 1, 1, 8, 8),
            conv6: c(3, 1, 1, 8, 8),
            head: HeadSpec {
                tower_depth: 1,
                tower_channels: 8,
                kernel: 3,
            },
            cf_first: true,
            cf_second: true,
            cf_response_scaling: true,
            head_response_scaling: true,
        }
    }

    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        let (cf_first, cf_second) = ablation.flags();
        Self {
            cf_first,
            cf_second,
            ..self.clone()
        }
    }

    /// Every channel width replaced by `channels`; spatial geometry untouched.
    pub fn with_uniform_channels(&self, channels: usize) -> Self {
        let mut cfg = self.clone();
        let mid = (channels / 2).max(1);
        for (i, spec) in [&mut cfg.conv1, &mut cfg.conv2, &mut cfg.conv3].into_iter().enumerate() {
            spec.in_channels = if i == 0 { 3 } else { channels };
            spec.out_channels = channels;
        }
        for spec in [&mut cfg.conv4, &mut cfg.conv5, &mut cfg.conv6] {
            spec.in_channels = channels;
            spec.out_channels = channels;
        }
        for block in [&mut cfg.block2, &mut cfg.block3] {
            block.mid_channels = mid;
            block.out_channels = channels;
        }
        cfg.head.tower_channels = channels;
        cfg
    }

    pub fn final_channels(&self) -> usize {
        self.conv6.out_channels
    }

    pub fn input_size(&self, role: Role) -> usize {
        match role {
            Role::Template => self.template_size,
            Role::Search => self.search_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.template_size >= self.search_size {
            return Err(Error::Config(format!(
                "template_size {} must be smaller than search_size {}",
                self.template_size, self.search_size
            )));
        }
        let chain = [
            ("conv1", &self.conv1, 3),
            ("conv2", &self.conv2, self.conv1.out_channels),
            ("conv3", &self.conv3, self.conv2.out_channels),
            ("conv4", &self.conv4, self.block3.out_channels),
            ("conv5", &self.conv5, self.conv4.out_channels),
            ("conv6", &self.conv6, self.conv5.out_channels),
        ];
        for (name, spec, expect_in) in chain {
            spec.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if spec.in_channels != expect_in {
                return Err(Error::Config(format!(
                    "{name}.in_channels is {} but the previous layer produces {expect_in}",
                    spec.in_channels
                )));
            }
        }
        for (name, b) in [("block2", &self.block2), ("block3", &self.block3)] {
            if b.units == 0 || b.stride == 0 || b.mid_channels == 0 || b.out_channels == 0 {
                return Err(Error::Config(format!(
                    "{name}: units, stride and channels must be positive"
                )));
            }
        }
        if self.head.kernel.is_multiple_of(2) || self.head.tower_channels == 0 {
            return Err(Error::Config(
                "head kernel must be odd and tower_channels positive".into(),
            ));
        }
        self.shape_table(Role::Template)?;
        self.shape_table(Role::Search)?;
        self.head_geometry()?;
        Ok(())
    }

    /// Output shape after every layer of one branch, in execution order.
    /// Rows `after_conv3`, `after_block2` and `final` mark the tap points.
    pub fn shape_table(&self, role: Role) -> Result<ShapeTable> {
        let mut rows = Vec::new();
        let size = self.input_size(role);
        let mut shape = [3, size, size];
        rows.push(("input".to_string(), shape));
        let conv = |name: &str, spec: &ConvSpec, s: [usize; 3]| -> Result<[usize; 3]> {
            let (h, w) = spec
                .output_hw(s[1], s[2])
                .map_err(|e| Error::Config(format!("{role:?} branch, {name}: {e}")))?;
            Ok([spec.out_channels, h, w])
        };
        for (name, spec) in [("conv1", &self.conv1), ("conv2", &self.conv2), ("conv3", &self.conv3)] {
            shape = conv(name, spec, shape)?;
            rows.push((name.to_string(), shape));
        }
        rows.push(("after_conv3".to_string(), shape));
        for (bname, block) in [("block2", &self.block2), ("block3", &self.block3)] {
            for u in 0..block.units {
                let stride = if u == 0 { block.stride } else { 1 };
                let h = output_extent(shape[1], 3, stride, 1)?;
                let w = output_extent(shape[2], 3, stride, 1)?;
                shape = [block.out_channels, h, w];
                rows.push((format!("{bname}.{u}"), shape));
            }
            if bname == "block2" {
                rows.push(("after_block2".to_string(), shape));
            }
        }
        for (name, spec) in [("conv4", &self.conv4), ("conv5", &self.conv5), ("conv6", &self.conv6)] {
            shape = conv(name, spec, shape)?;
            rows.push((name.to_string(), shape));
        }
        rows.push(("final".to_string(), shape));
        Ok(ShapeTable { rows })
    }

    /// Response-map extent, total stride and offset of the head outputs.
    pub fn head_geometry(&self) -> Result<HeadGeometry> {
        let t = self.shape_table(Role::Template)?.get("final").expect("final row");
        let s = self.shape_table(Role::Search)?.get("final").expect("final row");
        if t[1] > s[1] || t[2] > s[2] {
            return Err(Error::Config(format!(
                "final template map {t:?} is larger than the search map {s:?}"
            )));
        }
        // Each layer maps output index i to input index a + stride·i with
        // a = (k−1)/2 − p; walk from the head back to the image.
        let mut layers: Vec<(f64, usize)> = Vec::new();
        let conv_affine = |spec: &ConvSpec| ((spec.kernel_h as f64 - 1.0) / 2.0 - spec.padding as f64, spec.stride);
        layers.push(conv_affine(&self.conv1));
        layers.push(conv_affine(&self.conv2));
        layers.push(conv_affine(&self.conv3));
        for block in [&self.block2, &self.block3] {
            // The strided 3×3 (k3 p1) and the 1×1 shortcut both have a = 0.
            layers.push((0.0, block.stride));
        }
        layers.push(conv_affine(&self.conv4));
        layers.push(conv_affine(&self.conv5));
        layers.push(conv_affine(&self.conv6));

        // Correlation: map index i reads the template centered at i + (Ht−1)/2.
        let mut offset = (t[1] as f64 - 1.0) / 2.0;
        let mut stride = 1usize;
        for &(a, s) in layers.iter().rev() {
            offset = a + s as f64 * offset;
            stride *= s;
        }
        let height = s[1] - t[1] + 1;
        let width = s[2] - t[2] + 1;
        if stride * (width.max(height) - 1) + 1 > self.search_size {
            return Err(Error::Config(format!(
                "response map {height}x{width} with stride {stride} overruns the {} px search image",
                self.search_size
            )));
        }
        Ok(HeadGeometry {
            height,
            width,
            stride,
            offset: offset + 0.5,
        })
    }
}
