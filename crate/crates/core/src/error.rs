use thiserror::Error;

use crate::fitting::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Input data or configuration failed validation.
    #[error("validation error: {0}")]
    Validation(String),
    /// Propagation produced non-finite or significantly negative values.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A fit did not converge within its budget. Carries the best point found.
    #[error("fit failed: {message}")]
    Fit {
        message: String,
        best: Option<Box<FitResult>>,
    },
    /// The requested computation exceeds what an engine supports.
    #[error("capability exceeded: {0}")]
    Capability(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
