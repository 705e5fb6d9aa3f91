use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PerpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PerpError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at parameter `{param}`: {reason}")]
    Training { param: String, reason: String },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
}

impl PerpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return PerpError::MissingArtifact(path);
        }
        PerpError::Io { path, source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PerpError::Config(_) | PerpError::Format { .. } | PerpError::Input(_) => 2,
            PerpError::Shape { .. } => 2,
            PerpError::MissingArtifact(_) => 3,
            PerpError::Numeric(_) | PerpError::Training { .. } => 4,
            PerpError::Io { .. } => 3,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(PerpError::Shape {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
