//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown encoder backbone `{0}` (no pretrained checkpoints are bundled; use a tiny spec)")]
    UnknownBackbone(String),

    #[error("input of {len} tokens exceeds the encoder maximum of {max}; refusing to truncate")]
    SequenceTooLong { len: usize, max: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("model archive version {found} is not supported (expected {expected})")]
    ArchiveVersion { found: u32, expected: u32 },

    #[error("archive was trained with backbone `{archived}` but `{requested}` was requested")]
    BackboneMismatch { archived: String, requested: String },

    #[error("corpus does not match the teacher model: {0}")]
    CorpusMismatch(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io_not_found(path: &PathBuf) -> Self {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("file not found: {}", path.display()),
        ))
    }
}
