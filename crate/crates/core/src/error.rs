use alloc::string::String;

/// Failure classes shared by every module of the core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Caller supplied arguments that violate an operation's contract.
    #[error("invalid input: {0}")]
    Input(String),
    /// A metric could not be computed from the available subpopulations.
    #[error("evaluation error: {0}")]
    Evaluation(String),
    /// A training loop produced a non-finite loss or output.
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn eval(msg: impl Into<String>) -> Self {
        Error::Evaluation(msg.into())
    }
}
