//! Failure classes and their process exit codes.

use dcff_core::Error as CoreError;
use dcff_track::TrackError;
use dcff_train::{CheckpointError, TrainError};
use thiserror::Error;

pub const USAGE: u8 = 2;
pub const CONFIG: u8 = 3;
pub const DATA: u8 = 4;
pub const CHECKPOINT: u8 = 5;
pub const NON_FINITE: u8 = 6;
pub const GRADCHECK: u8 = 7;
/// Anything not covered above, such as a shape bug.
pub const INTERNAL: u8 = 1;

/// Failures raised by the command layer itself.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{failed} of {total} gradient checks failed")]
    GradcheckFailed { failed: usize, total: usize },
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) => CONFIG,
        CoreError::Io(_) | CoreError::Image(_) | CoreError::Dataset(_) => DATA,
        _ => INTERNAL,
    }
}

fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Core(inner) => core_code(inner),
        TrainError::Checkpoint(_) => CHECKPOINT,
        TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient { .. } => NON_FINITE,
        TrainError::Config(_) | TrainError::NoSuchStage { .. } => CONFIG,
        TrainError::EmptyDataset | TrainError::NoValidSamples { .. } | TrainError::Io { .. } => DATA,
    }
}

fn track_code(e: &TrackError) -> u8 {
    match e {
        TrackError::Core(inner) => core_code(inner),
        TrackError::NonFiniteScores { .. } => NON_FINITE,
        TrackError::Config(_) => CONFIG,
        TrackError::BadInit { .. }
        | TrackError::LengthMismatch { .. }
        | TrackError::Empty(_)
        | TrackError::Io { .. } => DATA,
    }
}

/// Exit code for the first recognized error in the chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => USAGE,
                CliError::Config(_) => CONFIG,
                CliError::Data(_) => DATA,
                CliError::GradcheckFailed { .. } => GRADCHECK,
            };
        }
        if cause.is::<CheckpointError>() {
            return CHECKPOINT;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TrackError>() {
            return track_code(e);
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
        if cause.is::<std::io::Error>() {
            return DATA;
        }
    }
    INTERNAL
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_per_class() {
        let cases: Vec<(anyhow::Error, u8)> = vec![
            (CliError::Usage("x".into()).into(), USAGE),
            (TrainError::Config("x".into()).into(), CONFIG),
            (TrainError::EmptyDataset.into(), DATA),
            (CheckpointError::TrailingBytes { count: 1 }.into(), CHECKPOINT),
            (
                TrainError::Checkpoint(CheckpointError::TrailingBytes { count: 1 }).into(),
                CHECKPOINT,
            ),
            (
                TrackError::NonFiniteScores {
                    frame: 3,
                    bbox: String::new(),
                }
                .into(),
                NON_FINITE,
            ),
            (CliError::GradcheckFailed { failed: 1, total: 2 }.into(), GRADCHECK),
            (TrackError::Core(CoreError::Dataset("x".into())).into(), DATA),
            (CoreError::InvalidArgument("x".into()).into(), INTERNAL),
        ];
        for (err, code) in cases {
            assert_eq!(exit_code(&err), code, "{err}");
        }
    }

    #[test]
    fn context_does_not_hide_the_class() {
        let err = anyhow::Error::from(TrainError::Config("bad".into())).context("loading run");
        assert_eq!(exit_code(&err), CONFIG);
    }
}
