use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are inconsistent.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// An argument is outside the documented domain of an operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("{what} is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { what: String, pivot: usize, value: f64 },

    /// A Gram matrix is singular and there is no regularizer to fall back on.
    #[error("{what} is singular; give the factor pair a positive delta to regularize it")]
    SingularGram { what: String },

    /// An iterative routine did not converge within its cap.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Not enough distinct arrangement patterns could be sampled.
    #[error(
        "found only {found} of {wanted} distinct activation masks after {samples} samples; \
         use more rows (larger n)"
    )]
    MaskSearch {
        wanted: usize,
        found: usize,
        samples: usize,
    },

    /// A serialized problem or config could not be read back.
    #[error("malformed input: {0}")]
    Format(String),

    /// The AdamW step counter would overflow.
    #[error("optimizer step counter overflow")]
    StepOverflow,

    /// The toy model's scalar factor hit zero, so its preconditioner is undefined.
    #[error("toy model scalar b is zero at step {step}; initialize b away from zero (b ~ Θ(1))")]
    ZeroScalar { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape {
        op,
        expected: expected.into(),
        got: got.into(),
    }
}
