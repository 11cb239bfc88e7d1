use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate post id `{0}`")]
    DuplicatePostId(String),
    #[error("embedding format: {0}")]
    Format(String),
    #[error("embedding ids do not match the corpus ({count} mismatches), first: {first:?}")]
    IdMismatch { count: usize, first: Vec<String> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("missing artifact {artifact}: run stage `{stage}` first")]
    MissingStage { stage: String, artifact: String },
    #[error("config: {0}")]
    Config(String),
    #[error("ground truth violated: {0}")]
    GroundTruth(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
