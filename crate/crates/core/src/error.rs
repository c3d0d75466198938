use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("autodiff error: {0}")]
    Tape(String),

    #[error("not a checkpoint: {0}")]
    NotACheckpoint(String),

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("truncated checkpoint: {0}")]
    CheckpointTruncated(String),

    #[error("checkpoint config mismatch: {0}")]
    CheckpointConfigMismatch(String),

    #[error("checkpoint tensor mismatch: {0}")]
    CheckpointTensorMismatch(String),

    #[error("unknown image format in {path}: magic bytes {magic:?}")]
    UnknownImageFormat { path: PathBuf, magic: String },

    #[error("truncated image {path}: {detail}")]
    TruncatedImage { path: PathBuf, detail: String },

    #[error("malformed image header in {path}: {detail}")]
    ImageHeader { path: PathBuf, detail: String },

    #[error("label value {value} at pixel (row {row}, col {col}) in {path} is out of range for {classes} classes")]
    LabelRange {
        path: PathBuf,
        row: usize,
        col: usize,
        value: u32,
        classes: usize,
    },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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
