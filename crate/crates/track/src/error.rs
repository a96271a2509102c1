use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TrackError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error(transparent)]
    Core(#[from] dcff_core::Error),
    #[error("cannot initialize on box {bbox}: {reason}")]
    BadInit { bbox: String, reason: String },
    #[error("non-finite scores at frame {frame} (previous box {bbox})")]
    NonFiniteScores { frame: usize, bbox: String },
    #[error("{predicted} predicted boxes for {groundtruth} ground-truth boxes")]
    LengthMismatch { predicted: usize, groundtruth: usize },
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error("invalid tracker setting: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
