use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty: {0}")]
    InputEmpty(&'static str),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible mixture spec: {0}")]
    SpecInfeasible(String),

    #[error("{got} speakers exceeds the exhaustive permutation cap of {cap}")]
    TooManySpeakers { got: usize, cap: usize },

    #[error("no speakers to diarize")]
    EmptyDiarization,

    #[error("reference contains no scored speech; DER is undefined")]
    UndefinedDer,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("checkpoint incompatible: {0}")]
    CheckpointIncompatible(String),

    #[error("malformed tensor container {path}: {msg}")]
    Container { path: PathBuf, msg: String },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
