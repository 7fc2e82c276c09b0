//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the numerical engine and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A schedule quantity was evaluated outside its valid domain or
    /// produced a non-finite value (e.g. σ→0 divergence).
    #[error("schedule out of domain at t = {t}: {what}")]
    ScheduleDomain { t: f64, what: &'static str },

    /// Mismatched vector dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A density evaluation hit a zero/negative variance.
    #[error("degenerate variance {variance} in component {component} at t = {t}")]
    DegenerateVariance {
        component: usize,
        variance: f64,
        t: f64,
    },

    /// A score or increment came back non-finite.
    #[error("non-finite {what} at tau = {tau}")]
    NonFinite { what: &'static str, tau: f64 },

    /// Weight computation received an unusable state (e.g. all log-densities -inf).
    #[error("degenerate superposition state: {0}")]
    DegenerateWeights(&'static str),

    /// Training diverged.
    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    /// Model/schedule/mode combination rejected up front.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Grid or MLP file did not match the expected format.
    #[error("malformed model file {path:?}: {what}")]
    MalformedFile { path: PathBuf, what: String },

    /// Filesystem failure, with the offending path.
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
