//! The persisted posterior: snapshots plus everything needed to predict.

use std::path::Path;

use dbnn_core::data::{Split, Standardizer, Trajectory};
use dbnn_core::nets::{ArchSpec, DbnnArch};
use dbnn_core::PosteriorSamples;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{io, CliError};

pub const FORMAT: &str = "dbnn-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    /// Canonical text of the resolved configuration.
    pub config: String,
    pub fingerprint: String,
    /// Seed of this run, derived from the master seed.
    pub run_seed: u64,
    pub arch: ArchSpec,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub x_scaler: Option<Standardizer>,
    pub y_scaler: Option<Standardizer>,
    pub split: Option<Split>,
    pub trajectory: Option<Trajectory>,
    pub skipped_iterations: usize,
    pub samples: PosteriorSamples,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let a: ModelArtifact = io::read_json(path)?;
        if a.format != FORMAT {
            return Err(CliError::Data {
                path: path.to_path_buf(),
                message: format!("unsupported model format `{}` (expected `{FORMAT}`)", a.format),
            });
        }
        Ok(a)
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        RunConfig::parse(&self.config).map_err(CliError::Config)
    }

    pub fn arch(&self) -> Result<DbnnArch, CliError> {
        Ok(DbnnArch::new(self.arch.clone())?)
    }
}
