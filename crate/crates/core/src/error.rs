use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line-oriented text input could not be parsed.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// The word2vec binary stream ended or was malformed.
    #[error("word2vec data at byte {offset} (word {word:?}): {message}")]
    Word2Vec {
        offset: u64,
        word: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Widths, dimensions or class counts of two objects disagree.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's inputs rather than the run itself.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Parse { .. }
            | Error::Word2Vec { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Mismatch(_) => true,
            Error::NonFinite(_) => false,
        }
    }
}
