//! Reverse-mode differentiation over the kernel set, the momentum SGD
//! optimizer, and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod sgd;

pub use gradcheck::{grad_check, relative_error, GradReport, InputReport, REL_ERR_FLOOR};
pub use graph::{Gradients, Graph, NodeId, Op};
pub use sgd::{clip_grad_norm, sgd_step, OptimState, SgdConfig};
