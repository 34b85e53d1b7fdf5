//! Crate-wide error type.

use thiserror::Error;

use crate::distances::DistanceKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("non-finite value {value} at index {index}")]
    NonFiniteValue { index: usize, value: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("need at least {required} observations per sample, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{kind:?} is not supported here: {reason}")]
    UnsupportedKind { kind: DistanceKind, reason: String },

    #[error("alpha must lie strictly inside (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("requested {requested} rows but only {available} available without replacement")]
    SizeExceedsData { requested: usize, available: usize },

    #[error("calibration data has only {available} rows labelled {label}, need {required}")]
    InsufficientLabelled {
        label: u8,
        required: usize,
        available: usize,
    },

    #[error("cannot fit estimator: {0}")]
    DegeneratePoints(String),

    #[error("fit did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("data has no variance; nothing to decompose")]
    DegenerateData,

    #[error("feature {feature}: {source}")]
    Feature {
        feature: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported model format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("reference digest mismatch for {path}: expected {expected}, found {found}")]
    DigestMismatch {
        path: String,
        expected: String,
        found: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the feature (column) index it occurred in.
    pub fn for_feature(self, feature: usize) -> Self {
        Error::Feature {
            feature,
            source: Box::new(self),
        }
    }
}
