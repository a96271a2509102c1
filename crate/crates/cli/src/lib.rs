//! Library side of the `dcff` command: the run config file, exit codes,
//! experiment harness and parameter inspection.

pub mod config;
pub mod exit;
pub mod harness;
pub mod inspect;

pub use config::RunConfig;
pub use exit::{exit_code, CliError};
