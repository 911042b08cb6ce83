//! Dense matrix arithmetic, a reverse-mode gradient tape and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod tape;

use thiserror::Error;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, Objective};
pub use matrix::{sigmoid, Matrix};
pub use tape::{bce_value, Gradients, Tape, Var, BCE_CLAMP};

/// Layer-norm variance guard.
pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("ragged rows: expected width {expected}, found {found}")]
    RaggedRows { expected: usize, found: usize },
    #[error("row index {index} out of range for {rows} rows")]
    RowIndex { index: usize, rows: usize },
    #[error("expected a scalar (1x1), found {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("objective returned {found} gradients for {expected} tensors")]
    GradientCount { expected: usize, found: usize },
}
