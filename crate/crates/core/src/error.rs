use std::path::PathBuf;

use thiserror::Error;

use crate::nn::Network;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}{}: {message}", column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<String>,
        message: String,
    },

    #[error("singular system{}: {message}", condition.map(|c| format!(" (condition estimate {c:.3e})")).unwrap_or_default())]
    Singular { message: String, condition: Option<f64> },

    #[error("degenerate anchor geometry: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training produced a non-finite or exploding loss. `checkpoint` holds the
    /// network as it was after the last finite epoch.
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence {
        epoch: usize,
        loss: f64,
        checkpoint: Box<Network>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("model file: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
