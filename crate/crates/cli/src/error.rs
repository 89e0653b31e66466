use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {}: run `{producer}` first", path.display())]
    MissingArtifact {
        path: PathBuf,
        producer: &'static str,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: trafficgrade::Error,
    },
}

impl CliError {
    /// 1 for usage and configuration, 2 for data, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::MissingArtifact { .. } => 2,
            CliError::Core { source, .. } => match source {
                trafficgrade::Error::ConfigMismatch(_) => 1,
                e if e.is_numeric() => 3,
                _ => 2,
            },
        }
    }
}

/// Attaches a short description of the failing step to core errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError>;
}

impl<T> Context<T> for trafficgrade::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|e| CliError::Core {
            context: what.into(),
            source: e.into(),
        })
    }
}
