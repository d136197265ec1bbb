use std::path::PathBuf;

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] oscmix_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 usage or configuration, 3 data or files, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(oscmix_core::Error::Config(_)) => 2,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }
}
