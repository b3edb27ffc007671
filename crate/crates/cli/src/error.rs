use std::io;
use std::path::PathBuf;

use gravinv::mesh::MeshError;
use thiserror::Error;

/// Failures of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("gradient check failed: {0}")]
    GradientMismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Mesh(_) => 2,
            CliError::Solver(_) => 3,
            CliError::GradientMismatch(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn solver(e: impl std::fmt::Display) -> CliError {
        CliError::Solver(e.to_string())
    }
}
