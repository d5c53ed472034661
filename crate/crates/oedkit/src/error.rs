//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum OedError {
    #[error("dimension mismatch: expected {expected}, got {got}{}", context_suffix(context))]
    DimensionMismatch {
        expected: String,
        got: String,
        context: &'static str,
    },

    #[error("matrix is not symmetric: relative asymmetry {asymmetry:.3e} exceeds {tolerance:.1e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive definite: pivot {pivot} is non-positive")]
    NotPositiveDefinite { pivot: usize },

    #[error("block {index} of block-diagonal matrix is singular")]
    SingularBlock { index: usize },

    #[error("weighted Hessian is not positive definite (pivot {pivot}); the weighting kernel produced an indefinite precision")]
    IndefiniteHessian { pivot: usize },

    #[error("SQRT kernel requires nonnegative design values, got {value} at index {index}")]
    KernelDomain { value: f64, index: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("mass matrix must be identity for criterion and Hessian operations")]
    UnsupportedMassMatrix,

    #[error("randomized evaluation is only available for the A-criterion")]
    RandomizedDCriterion,

    #[error("enumeration of {count} subsets exceeds cap {cap}; use a smaller budget or testbed")]
    EnumerationCapExceeded { count: u128, cap: u128 },

    #[error("line search failed repeatedly with indefinite Hessian; last valid objective {objective}")]
    OptimizerStalled { objective: f64, design: Vec<f64> },

    #[error("relative absolute error undefined: all truth entries are zero (rmse = {rmse})")]
    AllZeroTruth { rmse: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

impl OedError {
    pub(crate) fn dims(expected: impl Into<String>, got: impl Into<String>, context: &'static str) -> Self {
        OedError::DimensionMismatch {
            expected: expected.into(),
            got: got.into(),
            context,
        }
    }
}

pub type Result<T> = std::result::Result<T, OedError>;
