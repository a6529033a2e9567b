//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error(
        "feature matrix is rank deficient: rank {rank} < n = {n} \
         (smallest kept singular value {smallest:.3e}, threshold {threshold:.3e})"
    )]
    RankDeficient {
        rank: usize,
        n: usize,
        smallest: f64,
        threshold: f64,
    },

    #[error(
        "interpolation residual {residual:.3e} exceeds tolerance {tolerance:.3e}; \
         offending singular value {offending:.3e}"
    )]
    ResidualTooLarge {
        residual: f64,
        tolerance: f64,
        offending: f64,
    },

    #[error("dense storage guard: {rows} x {cols} entries exceed the desk-scale limit {limit}")]
    SizeGuard {
        rows: usize,
        cols: usize,
        limit: usize,
    },

    #[error(
        "step budget {budget} exhausted without reaching target {target:.6e} \
         (achieved {achieved:.6e} after {steps} steps)"
    )]
    BudgetExhausted {
        budget: u64,
        steps: u64,
        achieved: f64,
        target: f64,
    },

    #[error(
        "objective increased at step {step}: {previous:.17e} -> {current:.17e}; \
         the smoothness constant is underestimated"
    )]
    MonotonicityViolation {
        step: u64,
        previous: f64,
        current: f64,
    },

    #[error("pair covariance is not positive semidefinite: correlation {rho} outside [-1, 1]")]
    BadCovariance { rho: f64 },

    #[error("input {index} has zero norm and cannot be projected to the unit sphere")]
    ZeroNormInput { index: usize },

    #[error("could not draw {n} distinct inputs after {retries} retries")]
    DuplicateInputs { n: usize, retries: usize },

    #[error("idx parse error in {path}: {reason}")]
    IdxParse { path: String, reason: String },

    #[error("requested {requested} samples but {path} holds only {available}")]
    NotEnoughSamples {
        requested: usize,
        available: usize,
        path: String,
    },

    #[error("config parse error at line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
