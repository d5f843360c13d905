use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid clip `{clip_id}`: {reason}")]
    Validation { clip_id: String, reason: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("feature file format error: {0}")]
    Format(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("clip `{clip_id}` cannot be trimmed: {num_frames} frames, at least {min_frames} required")]
    Untrimmable {
        clip_id: String,
        num_frames: u32,
        min_frames: u32,
    },

    #[error("cannot sample {n} distinct frames from a window of {window} frames")]
    Sampling { n: usize, window: u32 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("label consistency error for clip `{0}`: positive clip has no pseudo-PNR slot")]
    Consistency(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} for clip `{clip_id}`")]
    NonFinite { what: String, clip_id: String },

    #[error("training aborted at epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing features for clip `{0}`")]
    MissingFeatures(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
