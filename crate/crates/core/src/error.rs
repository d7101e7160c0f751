use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch{}: {msg}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Shape { layer: Option<usize>, msg: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate task specifier: {0}")]
    DegenerateSpecifier(String),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("scripted policy failed to solve {0}")]
    ScriptFailure(String),

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape { layer: None, msg: msg.into() }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { what, msg: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
