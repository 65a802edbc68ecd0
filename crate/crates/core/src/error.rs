use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no categories remain after filtering (dropped: {dropped:?})")]
    NoCategoriesLeft { dropped: Vec<String> },

    #[error("design matrix is rank deficient; offending columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("non-finite log density at initialization of chain {chain}")]
    NonFiniteInit { chain: usize },

    #[error("chain {chain} failed: {source}")]
    Chain {
        chain: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown parameter name `{0}`")]
    UnknownName(String),

    #[error("malformed draws store: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad configuration or input files rather than
    /// a failing computation. The CLI maps these to exit code 2.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Config(_)
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::Format(_)
                | Error::UnknownName(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
