use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panorama: {0}")]
    InvalidPanorama(String),

    #[error("invalid view: {0}")]
    InvalidView(String),

    #[error("invalid eye action index {0} (expected 0..=8)")]
    InvalidAction(usize),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid kinematic chain: {0}")]
    InvalidChain(String),

    #[error("empty path passed to {0}")]
    EmptyPath(&'static str),

    #[error("dataset error in episode `{episode}`, field `{field}`: {message}")]
    Dataset {
        episode: String,
        field: String,
        message: String,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("environment error: {0}")]
    Env(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value during {stage}: {detail}")]
    NonFinite { stage: &'static str, detail: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dataset(
        episode: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Dataset {
            episode: episode.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}
