use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed trajectory log. `row` is 1-based and counts the header.
    #[error("{}: row {row}: {message}", file.display())]
    Ingest {
        file: PathBuf,
        row: usize,
        message: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("no usable windows: {0}")]
    NoUsableWindows(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}
