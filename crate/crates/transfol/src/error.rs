//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, geometry queries, integration, and
/// the various solvers built on top of them.
#[derive(Debug, Error)]
pub enum Error {
    /// A model name, parameter set, or configuration file was rejected.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument was outside the range an operation supports.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The time integrator failed (step-size underflow, step budget, NaN).
    #[error("integration failure at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    /// An iterative solver (Newton, bisection, continuation) did not converge.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    /// A quantity left the domain where the requested construction is valid
    /// (singular frame, degenerate critical point, non-transverse data, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// A structural hypothesis required by the requested construction fails;
    /// the payload describes the witness.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// Serialization or file I/O problems when reading/writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization problems.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Convenient alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
