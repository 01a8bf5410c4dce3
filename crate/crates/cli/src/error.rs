use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use groklab::analysis::AnalysisError;
use groklab::checkpoint::CheckpointError;
use groklab::dataset::DatasetError;
use groklab::group::GroupError;
use groklab::ka::KaError;
use groklab::model::ModelError;
use groklab::training::TrainError;
use groklab::transfer::TransferError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Ka(#[from] KaError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl CliError {
    pub fn file(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::File { path: path.to_path_buf(), message: err.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigParse { .. } => "ConfigParse",
            CliError::Config(_) => "Config",
            CliError::File { .. } => "FileError",
            CliError::Verification(_) => "Verification",
            CliError::Group(_) => "Group",
            CliError::Ka(_) => "Ka",
            CliError::Dataset(_) => "Dataset",
            CliError::Model(_) => "Model",
            CliError::Train(_) => "Train",
            CliError::Transfer(TransferError::File { .. }) | CliError::Checkpoint(CheckpointError::File { .. }) => {
                "FileError"
            }
            CliError::Transfer(_) => "Transfer",
            CliError::Checkpoint(_) => "Checkpoint",
            CliError::Analysis(_) => "Analysis",
        }
    }

    /// Path the error refers to, when there is one.
    pub fn path(&self) -> Option<PathBuf> {
        match self {
            CliError::ConfigParse { path, .. } | CliError::File { path, .. } => Some(path.clone()),
            CliError::Transfer(TransferError::File { path, .. }) => Some(path.clone()),
            CliError::Checkpoint(CheckpointError::File { path, .. } | CheckpointError::Format { path, .. }) => {
                Some(path.clone())
            }
            _ => None,
        }
    }

    /// The machine-readable form printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string(), "path": self.path() } })
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
