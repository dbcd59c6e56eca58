use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: line {line}: rating {rating} outside 1..=5")]
    RatingOutOfRange {
        path: PathBuf,
        line: u64,
        rating: i64,
    },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("line search failed: {0}")]
    LineSearch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("unknown method `{0}` (expected one of cdlfm, af, mf_gbt, mfus_gbt, tmatrix)")]
    UnknownMethod(String),
    #[error("unsupported artifact version `{found}`, expected `{expected}`")]
    Version { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
