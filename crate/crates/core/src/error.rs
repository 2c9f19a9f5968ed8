use std::io;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("type error: {0}")]
    Type(String),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("rle decode error: {0}")]
    Decode(String),

    #[error("non-finite activation after layer {layer} ({kind})")]
    NonFinite { layer: usize, kind: &'static str },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("state error: {0}")]
    State(String),

    #[error("model is frozen")]
    Frozen,

    #[error("no refinement needed: prediction already matches the ground truth")]
    NoRefinementNeeded,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("variant '{variant}': {source}")]
    Variant {
        variant: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    /// True for failures of the numerics (non-finite values, divergence).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Diverged { .. } => true,
            Error::Variant { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
