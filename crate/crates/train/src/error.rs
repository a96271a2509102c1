use std::path::PathBuf;

use thiserror::Error;

/// Checkpoint decoding and validation failures.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a DCFF checkpoint: magic bytes {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {field}")]
    Truncated { field: String },
    #[error("entry `{name}` has unknown dtype code {code}")]
    UnknownDtype { name: String, code: u8 },
    #[error("entry `{name}` has dtype code {found}, expected {expected}")]
    WrongDtype { name: String, found: u8, expected: u8 },
    #[error("entry `{name}` has shape {found:?}, the model config expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{section} section is missing entry `{name}`")]
    MissingEntry { section: &'static str, name: String },
    #[error("{section} section has unexpected entry `{name}`")]
    UnexpectedEntry { section: &'static str, name: String },
    #[error("entry `{name}` is invalid: {reason}")]
    InvalidEntry { name: String, reason: String },
    #[error("{count} trailing bytes after the last section")]
    TrailingBytes { count: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] dcff_core::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss {loss} at step {step} of stage `{stage}`; batch: {}", batch.join(", "))]
    NonFiniteLoss {
        stage: String,
        step: usize,
        loss: f64,
        batch: Vec<String>,
    },
    #[error("non-finite gradient norm at step {step} of stage `{stage}`; batch: {}", batch.join(", "))]
    NonFiniteGradient {
        stage: String,
        step: usize,
        batch: Vec<String>,
    },
    #[error("dataset has no sequence with at least one frame")]
    EmptyDataset,
    #[error("gave up after {attempts} draws without a non-degenerate sample")]
    NoValidSamples { attempts: usize },
    #[error("training plan has no stage {index} (it has {len})")]
    NoSuchStage { index: usize, len: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
