use std::path::PathBuf;

use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },

    #[error("malformed input: {0}")]
    Data(String),

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(posthoc_core::Error),
}

impl CliError {
    /// 2 is left to argument parsing.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(_) => 1,
            CliError::Config(_) => 3,
            CliError::MissingInput { .. } => 4,
            CliError::Data(_) => 5,
            CliError::Output { .. } => 6,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }
}

impl From<posthoc_core::Error> for CliError {
    fn from(e: posthoc_core::Error) -> Self {
        use posthoc_core::Error as E;
        match e {
            E::InvalidConfig(msg) | E::Usage(msg) => CliError::Config(msg),
            E::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError::MissingInput {
                path,
                hint: "file not found".into(),
            },
            E::Format { .. } | E::Json(_) | E::LabelOutOfRange { .. } => CliError::Data(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
