use std::io;
use std::path::PathBuf;

use sos_core::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, scenario or configuration values.
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::USAGE,
            CliError::Io { .. } => exit::DATA,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

pub fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::InvalidRate { .. }
        | CoreError::InvalidSizes { .. }
        | CoreError::SubsampleTooSmall { .. }
        | CoreError::InvalidArgument(_) => exit::USAGE,
        CoreError::Data { .. } | CoreError::Domain { .. } | CoreError::EmptyInput(_) => exit::DATA,
        CoreError::Dimension { .. }
        | CoreError::SingularMatrix { .. }
        | CoreError::SingularHessian
        | CoreError::NotPsd { .. }
        | CoreError::NoConvergence { .. } => exit::NUMERICAL,
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
