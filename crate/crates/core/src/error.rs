//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by estimation, selection, simulation, and inference routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A matrix argument had the wrong shape for the requested operation.
    #[error("dimension error in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A matrix that must have full column rank was numerically rank deficient.
    #[error("rank deficient matrix in {context} (relative tolerance {tol:e})")]
    RankDeficient { context: &'static str, tol: f64 },

    /// The regressor Gram matrix of block (i, j) was singular after annihilation.
    #[error("singular regressor block (i={i}, j={j}); condition estimate {cond:e}")]
    SingularBlock { i: usize, j: usize, cond: f64 },

    /// A configuration value violated its documented constraint.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A dataset failed validation; the report lists every violation.
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure in {context}: {detail}")]
    Numerical {
        context: &'static str,
        detail: String,
    },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Dimension {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
