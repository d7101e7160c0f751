use std::path::PathBuf;

use roboclip_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),
    #[error("acceptance gate failed: {0}")]
    Gate(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Gate(_) => 5,
            CliError::Core(e) => match e {
                CoreError::InvalidArgument(_) | CoreError::UnknownToken(_) | CoreError::DegenerateSpecifier(_) => 2,
                CoreError::MissingArtifact(_) | CoreError::Format { .. } => 3,
                CoreError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
                CoreError::NonFinite(_) => 4,
                _ => 1,
            },
            CliError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
            CliError::Io(_) | CliError::Json(_) => 1,
        }
    }
}
