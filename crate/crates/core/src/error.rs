use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported dimension {0}: at least 2 coordinates are required")]
    UnsupportedDimension(usize),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("stale forward cache (cache version {cache}, params version {params})")]
    StaleCache { cache: u64, params: u64 },

    #[error("training diverged at epoch {epoch}; last finite epoch: {last_good_epoch:?}")]
    Diverged {
        epoch: usize,
        last_good_epoch: Option<usize>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
