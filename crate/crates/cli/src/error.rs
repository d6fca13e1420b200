use std::path::Path;

/// Failure of a pipeline stage, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }

    /// Library errors raised while validating configuration values.
    pub fn config(e: gmm_imm::Error) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<gmm_imm::Error> for CliError {
    fn from(e: gmm_imm::Error) -> Self {
        use gmm_imm::Error as E;
        match e {
            E::Parameter(_) => CliError::Config(e.to_string()),
            E::Invariant(_) => CliError::Numerical(e.to_string()),
            E::Ingest { .. } | E::NoUsableWindows(_) | E::Io { .. } => CliError::Data(e.to_string()),
        }
    }
}
