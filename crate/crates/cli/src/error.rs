use std::path::Path;

/// A command failure, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or malformed input files, invalid configuration.
    #[error("{0}")]
    Input(String),
    /// Failures while running an algorithm or writing results.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// Classifies a library error raised while handling `path`.
    pub fn at(path: &Path, e: flowmapf_core::Error) -> Self {
        let msg = format!("{}: {e}", path.display());
        if e.is_input_error() {
            CliError::Input(msg)
        } else {
            CliError::Runtime(msg)
        }
    }
}

impl From<flowmapf_core::Error> for CliError {
    fn from(e: flowmapf_core::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
