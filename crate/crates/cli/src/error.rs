use std::io;
use std::path::Path;

use thiserror::Error;

/// Exit code for bad user input: unreadable config, malformed rows,
/// mismatched files.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for environment failures such as unwritable outputs.
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { context: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}
