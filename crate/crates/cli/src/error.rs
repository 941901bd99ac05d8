use std::path::PathBuf;

use thiserror::Error;

/// CLI-side failures. `Usage` maps to exit code 2, everything else to 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("range error: {key} must be {bound} (got {got})")]
    Range {
        key: &'static str,
        bound: &'static str,
        got: String,
    },

    #[error("unknown config key at line {line}: {key}")]
    UnknownKey { line: usize, key: String },

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] gradlab_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// Exit code for this error under the stable contract
    /// (0 pass, 1 failure, 2 usage error).
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. }
            | CliError::Range { .. }
            | CliError::UnknownKey { .. }
            | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
