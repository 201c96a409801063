use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("unsupported template `{0}`")]
    UnsupportedTemplate(String),

    #[error("calibration profile has no coefficients for module `{0}`")]
    ProfileMissingModule(String),

    #[error("external evaluator failed: {message}")]
    ExternalToolFailure { message: String, diagnostics: String },

    #[error("duplicate data point `{0}`")]
    DuplicatePoint(String),

    #[error("storage error: {0}")]
    Storage(String),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("missing artifact `{0}`")]
    MissingArtifact(String),

    #[error("prompt needs {needed} tokens, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },

    #[error("no structured candidate block in reply")]
    ProposalUnparseable,

    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),

    #[error("design space exhausted")]
    SpaceExhausted,

    #[error("unknown point `{0}`")]
    UnknownPoint(String),

    #[error("point `{0}` already has a different verdict")]
    VerdictConflict(String),

    #[error("run folder `{}` already exists", .0.display())]
    RunFolderExists(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn storage(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        Error::Storage(format!("{context}: {err}"))
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
