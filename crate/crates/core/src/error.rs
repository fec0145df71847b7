use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum PimrlError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("unknown op kind `{0}`")]
    UnknownOp(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{phase} diverged at step {step}: non-finite values")]
    Divergence { phase: &'static str, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u8 },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: inconsistent header: {reason}")]
    InconsistentHeader { path: PathBuf, reason: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PimrlError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PimrlError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 config, 3 I/O, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            PimrlError::Divergence { .. } | PimrlError::NonFiniteGradient(_) => 4,
            PimrlError::Io { .. }
            | PimrlError::BadMagic { .. }
            | PimrlError::UnsupportedVersion { .. }
            | PimrlError::Truncated { .. }
            | PimrlError::InconsistentHeader { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PimrlError>;
