//! Per-sequence tracking: template features are computed once from the
//! first frame, then every frame is searched around the previous estimate.

use dcff_core::autodiff::Graph;
use dcff_core::backbone::{self, FusionInputs};
use dcff_core::config::{HeadGeometry, ModelConfig, Role};
use dcff_core::heads::{self, HeadOutput};
use dcff_core::image::{self, search_transform, template_transform, CropTransform};
use dcff_core::{BBox, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrackError};

/// Post-processing knobs. `window_influence = 0` and `size_smoothing = 1`
/// leave the raw network decision untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Weight of the cosine window in the score blend, in `[0, 1]`.
    pub window_influence: f64,
    /// Fraction of the decoded size taken each frame, in `(0, 1]`.
    pub size_smoothing: f64,
    /// Smallest width/height a clamped box may have, pixels.
    pub min_box_side: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window_influence: 0.4,
            size_smoothing: 0.3,
            min_box_side: 1.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.window_influence) {
            return Err(TrackError::Config(format!(
                "window_influence {} is outside [0, 1]",
                self.window_influence
            )));
        }
        if !(self.size_smoothing > 0.0 && self.size_smoothing <= 1.0) {
            return Err(TrackError::Config(format!(
                "size_smoothing {} is outside (0, 1]",
                self.size_smoothing
            )));
        }
        if !(self.min_box_side > 0.0 && self.min_box_side.is_finite()) {
            return Err(TrackError::Config(format!(
                "min_box_side {} must be positive",
                self.min_box_side
            )));
        }
        Ok(())
    }
}

/// Template-branch features at every tap, computed once per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateCache {
    pub after_conv3: Tensor,
    pub after_block2: Tensor,
    pub final_map: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub bbox: BBox,
    pub template: TemplateCache,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Frames seen so far, including the initialization frame.
    pub frame: usize,
}

/// What one update decided.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub bbox: BBox,
    /// Raw positive-class probability at the chosen location.
    pub score: f64,
    /// Chosen response-map location as (row, column).
    pub peak: (usize, usize),
    /// Nodes in the per-frame graph; constant over a sequence.
    pub graph_nodes: usize,
}

/// Network output for one search crop.
#[derive(Debug, Clone)]
pub struct Response {
    /// Positive-class probabilities, `[1, H, W]`.
    pub scores: Tensor,
    pub output: HeadOutput,
    pub transform: CropTransform,
    pub graph_nodes: usize,
}

/// Outer product of two Hann windows, peaking at 1 in the middle of an
/// odd-sized map.
pub fn cosine_window(height: usize, width: usize) -> Tensor {
    let hann = |n: usize, i: usize| {
        if n == 1 {
            1.0
        } else {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
        }
    };
    Tensor::from_fn(&[1, height, width], |i| {
        hann(height, i / width) * hann(width, i % width)
    })
    .expect("non-empty window")
}

/// Blends scores with the window: `s·((1−w) + w·window)`.
pub fn penalize(scores: &Tensor, window: &Tensor, influence: f64) -> Result<Tensor> {
    Ok(scores.zip_map(window, "penalize", |s, c| s * ((1.0 - influence) + influence * c))?)
}

/// Restricts a box to the frame: center inside it, sides within
/// `[min_side, frame extent]`.
pub fn clamp_to_frame(b: &BBox, width: usize, height: usize, min_side: f64) -> BBox {
    let (cx, cy) = b.center();
    let (fw, fh) = (width as f64, height as f64);
    BBox::from_center_size(
        cx.clamp(0.0, fw),
        cy.clamp(0.0, fh),
        b.width().clamp(min_side.min(fw), fw),
        b.height().clamp(min_side.min(fh), fh),
    )
}

/// Shared read-only weights plus settings; one [`TrackerState`] per sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub config: TrackerConfig,
    geometry: HeadGeometry,
    window: Tensor,
}

impl Tracker {
    pub fn new(model: ModelConfig, params: ParamStore, config: TrackerConfig) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let geometry = model.head_geometry()?;
        let window = cosine_window(geometry.height, geometry.width);
        Ok(Self {
            model,
            params,
            config,
            geometry,
            window,
        })
    }

    pub fn geometry(&self) -> HeadGeometry {
        self.geometry
    }

    pub fn init(&self, frame: &Tensor, gt: &BBox) -> Result<TrackerState> {
        let (_, h, w) = frame.dims3()?;
        let bad = |reason: &str| TrackError::BadInit {
            bbox: format!("{gt:?}"),
            reason: reason.to_string(),
        };
        if !(gt.width() > 0.0 && gt.height() > 0.0) || !gt.area().is_finite() {
            return Err(bad("box must have positive, finite area"));
        }
        let frame_box = BBox::new(0.0, 0.0, w as f64, h as f64);
        if gt.intersection_area(&frame_box) <= 0.0 {
            return Err(bad("box lies outside the frame"));
        }
        let transform = template_transform(gt, self.model.template_size);
        let patch = image::crop(frame, &transform, &image::channel_means(frame)?)?;
        let mut g = Graph::new();
        let z = g.input(patch);
        let t = backbone::forward_branch(
            &mut g,
            &self.model,
            &self.params,
            z,
            Role::Template,
            &FusionInputs::default(),
        )?;
        Ok(TrackerState {
            bbox: *gt,
            template: TemplateCache {
                after_conv3: g.value(t.after_conv3).clone(),
                after_block2: g.value(t.after_block2).clone(),
                final_map: g.value(t.final_map).clone(),
            },
            frame_width: w,
            frame_height: h,
            frame: 1,
        })
    }

    /// Raw network response for `frame` searched around the current
    /// estimate. Does not advance `state`.
    pub fn respond(&self, state: &TrackerState, frame: &Tensor) -> Result<Response> {
        let prev = state.bbox;
        let (cx, cy) = prev.center();
        let transform = search_transform(cx, cy, prev.width(), prev.height(), &self.model);
        let patch = image::crop(frame, &transform, &image::channel_means(frame)?)?;

        let mut g = Graph::new();
        let x = g.input(patch);
        let fusion = FusionInputs {
            after_conv3: Some(g.input(state.template.after_conv3.clone())),
            after_block2: Some(g.input(state.template.after_block2.clone())),
        };
        let template_final = g.input(state.template.final_map.clone());
        let s = backbone::forward_branch(&mut g, &self.model, &self.params, x, Role::Search, &fusion)?;
        let nodes = heads::clsreg_forward(&mut g, &self.model, &self.params, s.final_map, template_final)?;
        let output = nodes.output(&g, &self.geometry);
        let scores = output.positive_scores();
        if !scores.all_finite() || !output.reg.all_finite() {
            return Err(TrackError::NonFiniteScores {
                frame: state.frame,
                bbox: format!("{prev:?}"),
            });
        }
        Ok(Response {
            scores,
            output,
            transform,
            graph_nodes: g.len(),
        })
    }

    /// Locates the target in `frame` and advances `state`.
    pub fn update(&self, state: &mut TrackerState, frame: &Tensor) -> Result<Update> {
        let prev = state.bbox;
        let Response {
            scores,
            output: out,
            transform,
            graph_nodes,
        } = self.respond(state, frame)?;
        let ranked = penalize(&scores, &self.window, self.config.window_influence)?;
        let index = ranked.argmax();
        let (row, col) = (index / self.geometry.width, index % self.geometry.width);
        let decoded = heads::decode_box(col, row, out.reg_at(index), self.geometry.stride, self.geometry.offset);
        let in_frame = transform.box_to_frame(&decoded);

        let (ncx, ncy) = in_frame.center();
        let gamma = self.config.size_smoothing;
        let nw = (1.0 - gamma) * prev.width() + gamma * in_frame.width();
        let nh = (1.0 - gamma) * prev.height() + gamma * in_frame.height();
        let bbox = clamp_to_frame(
            &BBox::from_center_size(ncx, ncy, nw, nh),
            state.frame_width,
            state.frame_height,
            self.config.min_box_side,
        );
        state.bbox = bbox;
        state.frame += 1;
        Ok(Update {
            bbox,
            score: scores.data()[index],
            peak: (row, col),
            graph_nodes,
        })
    }

    /// Tracks a whole sequence; the first prediction is the given box.
    pub fn track(&self, frames: &[Tensor], init: &BBox) -> Result<Vec<BBox>> {
        let first = frames.first().ok_or(TrackError::Empty("sequence has no frames"))?;
        let mut state = self.init(first, init)?;
        let mut boxes = vec![*init];
        for frame in &frames[1..] {
            boxes.push(self.update(&mut state, frame)?.bbox);
        }
        Ok(boxes)
    }
}
