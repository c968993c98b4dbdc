use std::path::PathBuf;

/// Process exit code for invalid input, configuration or files.
pub const EXIT_VALIDATION: i32 = 2;
/// Process exit code for failures while running a valid request.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A record that does not match its file schema.
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    /// A valid request whose computation failed a runtime check.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] shortfall_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Self::Format { path: path.into(), line, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        use shortfall_core::Error as C;
        match self {
            Error::Io { .. } | Error::Runtime(_) => EXIT_RUNTIME,
            Error::Format { .. } | Error::Config(_) | Error::Validation(_) => EXIT_VALIDATION,
            Error::Core(e) => match e {
                C::NonConvergence { .. } | C::NonFiniteGradient(_) | C::NonFiniteLoss { .. } => EXIT_RUNTIME,
                _ => EXIT_VALIDATION,
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
