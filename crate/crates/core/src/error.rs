use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot build index: {0}")]
    Build(String),

    #[error("cannot render prompt: {0}")]
    Render(String),

    #[error("not found: {0}")]
    Lookup(String),

    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend {
        message: String,
        attempts: u32,
        /// HTTP status of the last attempt, if one was received.
        status: Option<u16>,
    },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("comparison {doc_a} vs {doc_b} for query {query_id} failed: {source}")]
    Comparison {
        query_id: String,
        doc_a: String,
        doc_b: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True when the failure came from the language-model backend (possibly
    /// wrapped in a comparison error).
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Backend { .. } | Error::Oracle(_) => true,
            Error::Comparison { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
