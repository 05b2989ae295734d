use std::path::Path;

/// Workbench failure, split by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration, arguments or input files (exit 1).
    #[error("{0}")]
    Input(String),
    /// Training, evaluation or output failure (exit 2).
    #[error("{0}")]
    Runtime(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 1,
            Error::Runtime(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }

    /// Prefixes the message with `ctx`.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            Error::Input(m) => Error::Input(format!("{ctx}: {m}")),
            Error::Runtime(m) => Error::Runtime(format!("{ctx}: {m}")),
            other => other,
        }
    }

    /// An error reading an input file.
    pub fn read(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::Input(format!("{}: {err}", path.display()))
    }

    /// An error writing an output file.
    pub fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::Runtime(format!("{}: {err}", path.display()))
    }
}

impl From<acai_core::Error> for Error {
    fn from(e: acai_core::Error) -> Self {
        match e {
            acai_core::Error::Input(m) => Error::Input(m),
            other => Error::Runtime(other.to_string()),
        }
    }
}
