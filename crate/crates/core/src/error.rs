//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset construction, model fitting, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// Input vectors or matrices with inconsistent shapes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A dataset invariant was violated (treatment coding, missing outcomes,
    /// absent arms, role tags).
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    /// Argument outside the domain of a convex generator.
    #[error("{generator} generator: value {value} outside domain {domain}")]
    Domain {
        generator: &'static str,
        value: f64,
        domain: &'static str,
    },

    /// Requested (model, loss) or (functional, basis) combination is not supported.
    #[error("unsupported combination: {0}")]
    Unsupported(String),

    /// A propensity or ratio left its valid range (overlap violation).
    #[error("overlap violation: {0}")]
    Overlap(String),

    /// Degenerate input that makes the operation undefined (zero fluctuation
    /// direction, empty fold, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Non-finite value encountered while optimizing or evaluating a fit.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// CSV parsing or I/O failure.
    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
