use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("{path}: unsupported maxval {maxval} (only 8-bit rasters are supported)")]
    UnsupportedMaxval { path: PathBuf, maxval: u32 },

    #[error("{path}: truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h} in {context}")]
    DimensionMismatch {
        context: &'static str,
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no frames found in {0}")]
    EmptyInput(PathBuf),

    #[error("no objects present in the mask set")]
    NoObjects,

    #[error("json error: {0}")]
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

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
