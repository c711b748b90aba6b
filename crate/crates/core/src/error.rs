use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable name of the variant, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index(_) => "index",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Alignment(_) => "alignment",
            Error::Vocabulary(_) => "vocabulary",
            Error::Length(_) => "length",
            Error::Data(_) => "data",
            Error::UndefinedCorrelation(_) => "undefined-correlation",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
        }
    }
}
