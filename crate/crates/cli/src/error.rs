use std::path::Path;

use thiserror::Error;

/// Failures at the command-line boundary, each with its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("fit did not converge: {0}")]
    Fit(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<nvsr_core::Error> for CliError {
    fn from(e: nvsr_core::Error) -> Self {
        use nvsr_core::Error as E;
        // drop the core label where ours says the same thing
        let text = e.to_string();
        let strip = |label: &str| text.replacen(label, "", 1);
        match e.root() {
            E::Validation(_) => CliError::Validation(strip("validation error: ")),
            E::Domain(_) | E::Capability(_) => CliError::Validation(text),
            E::Fit { .. } => CliError::Fit(strip("fit failed: ")),
            E::Numerical(_) => CliError::Fit(text),
            E::Context { .. } => unreachable!("root skips context"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
