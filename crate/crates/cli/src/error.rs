use std::path::Path;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, missing input files, unreadable configuration.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(lhfi::Error),
    /// A validation suite ran and did not pass.
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }
}

impl From<lhfi::Error> for CliError {
    fn from(e: lhfi::Error) -> Self {
        use lhfi::Error as E;
        match e {
            E::Config(_) | E::Schema(_) | E::UnknownName(_) | E::AnchorMissing(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Runtime(lhfi::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}
