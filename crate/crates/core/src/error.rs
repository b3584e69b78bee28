use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("image pair ({image_a}, {image_b}): keypoint index {index} out of range (image has {len} keypoints)")]
    KeypointOutOfRange {
        image_a: u32,
        image_b: u32,
        index: usize,
        len: usize,
    },

    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: usize, to: usize },

    #[error("descriptor dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("image {0} has no pixel data; supply precomputed flows instead of running the aligner")]
    MissingPixels(u32),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("edge {from} -> {to} has no flow field")]
    MissingFlow { from: usize, to: usize },

    #[error("non-finite value in residual of edge {from} -> {to}")]
    NonFinite { from: usize, to: usize },

    #[error("scene generation failed: {0}")]
    Synthesis(String),

    #[error("{path}:{line}: column `{column}`: {message}")]
    Schema {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{path}: unexpected header {found:?}, expected {expected:?}")]
    Header {
        path: PathBuf,
        found: Vec<String>,
        expected: Vec<String>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
