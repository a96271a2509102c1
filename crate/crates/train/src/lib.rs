//! Training for DCFFNet at desk scale: synthetic sequences, template/search
//! pair sampling with augmentation, the staged SGD schedule, and binary
//! checkpoints that resume bit-exactly.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod plan;
pub mod synth;
pub mod trainer;

pub use checkpoint::{Checkpoint, Cursor};
pub use data::{Dataset, FrameSequence, TrainingSample};
pub use error::{CheckpointError, Result, TrainError};
pub use plan::{HeadKind, StageSpec, TrainConfig};
pub use trainer::Trainer;
