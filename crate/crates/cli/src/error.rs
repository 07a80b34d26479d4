use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    /// An upstream artifact is missing.
    #[error("missing {}: produced by `brainalign {producer}` (cmd_{producer}); run it first", path.display())]
    Dependency { path: PathBuf, producer: &'static str },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: brainalign::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Dependency { .. } => 3,
            CliError::Core { source, .. } => match source {
                brainalign::Error::Numerical(_)
                | brainalign::Error::Diverged { .. }
                | brainalign::Error::Singular { .. } => 4,
                brainalign::Error::InvalidInput(_) => 2,
                _ => 1,
            },
            CliError::Io { .. } => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches a stage description to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for brainalign::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what(),
            source,
        })
    }
}
