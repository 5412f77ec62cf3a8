use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A command-line flag whose value could not be used.
    #[error("{flag}: {message}")]
    Flag { flag: &'static str, message: String },
    /// A field of a report or config file.
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] polyenv::Error),
}

impl CliError {
    pub fn flag(flag: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Flag {
            flag,
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
