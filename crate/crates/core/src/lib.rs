//! Core of the DCFFNet siamese tracker: dense tensors and kernels, a small
//! reverse-mode autodiff graph, the staged correlation-fusion backbone, both
//! prediction heads with their losses, and image/dataset IO.

pub mod autodiff;
pub mod backbone;
pub mod bbox;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod heads;
pub mod image;
pub mod kernels;
pub mod losses;
pub mod model;
pub mod params;
pub mod tensor;

pub use bbox::{BBox, RegVector};
pub use config::{Ablation, ModelConfig, Role};
pub use error::{Error, Result};
pub use model::{freeze_mask, init_params, Stage};
pub use params::{Init, ParamStore};
pub use tensor::{DType, Scalar, Tensor};
