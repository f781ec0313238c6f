use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {0}")]
    SignalTooShort(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("cutoff above Nyquist: {high_hz} Hz >= {nyquist_hz} Hz")]
    CutoffAboveNyquist { high_hz: f64, nyquist_hz: f64 },

    #[error("insufficient scales: {found} usable scale(s), need at least 3")]
    InsufficientScales { found: usize },

    #[error("series too short: {embedded} embedded points, need at least {required}")]
    SeriesTooShort { embedded: usize, required: usize },

    #[error("degenerate density")]
    DegenerateDensity,

    #[error("degenerate covariance")]
    DegenerateCovariance,

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("zero dynamic range")]
    ZeroDynamicRange,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("session mismatch: {0}")]
    SessionMismatch(String),

    #[error("{path}: line {line}: {message}")]
    Malformed { path: PathBuf, line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
