use std::path::PathBuf;

/// Errors from file formats, configuration and the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum LucentError {
    #[error(transparent)]
    Core(#[from] lucent_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("container was built for a different mesh (hash {container}, mesh {mesh})")]
    HashMismatch { container: String, mesh: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("service: {0}")]
    Service(String),
}

pub type Result<T> = std::result::Result<T, LucentError>;

impl LucentError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LucentError::Io { path: path.into(), source }
    }

    /// Process exit status: 1 usage, 2 validation failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            LucentError::Config(_) => 1,
            LucentError::Core(
                lucent_core::Error::InvalidMaterial(_)
                | lucent_core::Error::InvalidCamera(_)
                | lucent_core::Error::InvalidLight(_)
                | lucent_core::Error::InvalidGrid(_)
                | lucent_core::Error::BasisCount { .. },
            ) => 1,
            LucentError::Validation(_) | LucentError::Core(_) => 2,
            LucentError::Io { .. }
            | LucentError::Parse { .. }
            | LucentError::Corrupt(_)
            | LucentError::Version { .. }
            | LucentError::HashMismatch { .. }
            | LucentError::Image(_)
            | LucentError::Service(_) => 3,
        }
    }
}
