//! Minimal tensor algebra with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: dense row-major tensors, a recorded
//! computation graph ([`Graph`]) holding one node per primitive operation,
//! and a reverse-topological backward pass. Every differentiable primitive
//! the segmentation model needs is implemented here, together with a
//! central finite-difference gradient checker that keeps the hand-written
//! backward rules honest.

mod gradcheck;
mod graph;
pub mod kernels;
mod scalar;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub(crate) use gradcheck::finite_diff_check_impl as gradcheck_tampered;
pub use graph::{Gradients, Graph, ValueId};
pub use scalar::Scalar;
pub use tensor::Tensor;

use thiserror::Error;

/// Additive guard inside every `log` and under every L2 norm.
pub const LOG_GUARD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NumericsError {
    /// A dimension of one operand does not match what the operation requires.
    #[error("{op}: {axis} mismatch: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("backward requires a scalar loss node, got {numel} elements")]
    NonScalarLoss { numel: usize },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
