use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("cannot encode {path}: {message}")]
    Encode { path: PathBuf, message: String },

    #[error("unsupported format in {path}: {message}")]
    Unsupported { path: PathBuf, message: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("coordinate ({row}, {col}) is outside a {height}x{width} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("histogram is not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no material-consistent shadow edge found")]
    NoMcEdges,

    #[error("objective evaluated to a non-finite value")]
    NonFiniteLoss,

    #[error("invalid annotation: {0}")]
    Annotation(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
