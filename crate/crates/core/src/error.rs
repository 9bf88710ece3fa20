use std::path::PathBuf;

use thiserror::Error;

use crate::rerank::ScorerError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{file}:{line}: {message}")]
    Line {
        file: String,
        line: usize,
        message: String,
    },

    #[error("missing required column `{0}` in metadata table")]
    MissingColumn(String),

    #[error("index file error: {0}")]
    IndexFile(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("query `{0}` has no terms after analysis")]
    EmptyQuery(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no relevant judgments available")]
    NoRelevantJudgments,

    #[error("document `{0}` not found")]
    UnknownDocument(String),

    #[error("scorer error: {0}")]
    Scorer(#[from] ScorerError),

    #[error("re-ranking aborted after {completed} of {total} passages: {source}")]
    RerankAborted {
        completed: usize,
        total: usize,
        #[source]
        source: ScorerError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn line(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Line {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
