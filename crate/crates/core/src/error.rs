use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("unknown backend '{0}'")]
    UnknownBackend(String),

    #[error("backend '{id}' failed: {reason}")]
    Backend { id: String, reason: String },

    #[error("no face detected")]
    NoFace,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown region '{0}'")]
    UnknownRegion(String),

    #[error("cosine similarity undefined: both vectors are zero")]
    ZeroCosine,

    #[error("non-finite loss in term '{term}' at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },

    #[error("image too small for {scales}-scale MS-SSIM: minimum side is {min_side}px, got {width}x{height}")]
    ImageTooSmall {
        scales: usize,
        min_side: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate image path in manifest: {0}")]
    DuplicatePath(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("report parse error: {0}")]
    Report(String),

    #[error("template file error: {0}")]
    TemplateFormat(String),

    #[error("output directory is locked by another run: {0}")]
    Locked(PathBuf),

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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

pub type Result<T> = std::result::Result<T, Error>;
