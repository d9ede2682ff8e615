//! Dense tensor kernel with explicit analytic backward passes, Adam, and a
//! finite-difference gradient checker.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod lstm;
pub mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig, ParamTensor, Parameterized};
pub use checkpoint::{Checkpoint, StoredTensor};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use lstm::{lstm_cell, lstm_cell_backward, CellCache, Lstm, LstmLayer, LstmTrace};
pub use ops::Mode;
pub use tensor::Tensor2;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("pooling over an all-false mask")]
    EmptyMask,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
