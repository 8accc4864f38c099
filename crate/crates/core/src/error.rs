use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("unknown tone: {0}")]
    UnknownTone(String),

    #[error("duplicate tweet_id `{0}` in label file")]
    DuplicateLabel(String),

    #[error("conflicting alias `{alias}`: maps to both {first} and {second}")]
    ConflictingAlias {
        alias: String,
        first: String,
        second: String,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{what} line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            reason: reason.into(),
        }
    }
}
