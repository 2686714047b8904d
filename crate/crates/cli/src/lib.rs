//! Run configuration, file formats and the `gen-data` / `train` / `predict`
//! / `benchmark` workflows around `dbnn-core`.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: {message}", .path.display())]
    Data { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] dbnn_core::Error),
}

impl CliError {
    /// 2 for a divergence abort during training, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(dbnn_core::Error::DivergenceAbort { .. }) => 2,
            _ => 1,
        }
    }
}
