//! Online tracking with a trained DCFFNet and one-pass (OPE) evaluation.

pub mod error;
pub mod ope;
pub mod overlay;
pub mod tracker;

pub use error::{Result, TrackError};
pub use ope::{ope_evaluate, ope_evaluate_with, OpeConfig, OpeResult};
pub use tracker::{Response, TemplateCache, Tracker, TrackerConfig, TrackerState, Update};
