use std::io;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("insufficient positive weight mass: requested {requested}, only {available} positive weights")]
    InsufficientMass { requested: usize, available: usize },

    #[error("budget error: {0}")]
    Budget(String),

    #[error("candidate pool exhausted")]
    ExhaustedPool,

    #[error("action {action} out of range [0, {max}]")]
    ActionOutOfRange { action: usize, max: usize },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
