use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },

    #[error("silent signal: {0}")]
    Silent(&'static str),

    #[error("position outside room: {0}")]
    Geometry(String),

    #[error("rank-deficient reference set")]
    RankDeficient,

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("missing outputs for {} mixture(s): {}", .0.len(), .0.join(", "))]
    MissingOutputs(Vec<String>),

    #[error("insufficient source utterances: need {needed}, pool has {available}")]
    InsufficientSources { needed: usize, available: usize },

    #[error("training diverged at epoch {epoch}: state dumped to {dump}")]
    Diverged { epoch: usize, dump: PathBuf },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
