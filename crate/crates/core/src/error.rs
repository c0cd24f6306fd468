//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any layer of the engine.
#[derive(Debug, Error)]
pub enum EthError {
    /// A caller violated an operation precondition (bad shape, id out of
    /// bounds, mismatched curvature, non-finite input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A forward or backward computation produced NaN/Inf.
    #[error("numeric failure in {op}: {detail}")]
    Numeric { op: String, detail: String },

    /// A dataset file could not be parsed.
    #[error("parse error in {path} line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// Checkpoint is unreadable or inconsistent with the requested config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A bug in this crate's own bookkeeping, e.g. a filter mask that
    /// masks the evaluated gold itself.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EthError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        EthError::InvalidArgument(msg.into())
    }

    pub fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        EthError::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, EthError>;
