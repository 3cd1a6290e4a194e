//! Experiment orchestration behind the `tlon` command line: dataset
//! generation, source training, fine-tuning sweeps, evaluation, Monte Carlo
//! moments and report merging.

mod commands;
mod config;
mod report;
mod tasks;

pub use commands::{
    cmd_eval, cmd_finetune, cmd_gen, cmd_report, cmd_train_source, cmd_uq, dataset_path, read_dataset, source_checkpoint_path,
    CellOutcome, FinetuneSummary, GenSummary, SourceSummary, UqSummary, GIT_DESCRIBE,
};
pub use config::{parse_override, DataConfig, DumpConfig, ExperimentConfig, Mode, PathsConfig, ReportConfig, Task, UqConfig};
pub use report::{merge_reports, parse_report, read_report, render_markdown, write_report};
pub use tasks::{generate, sample_stream, Domain, TaskSetup};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::AdError;
use crate::container::ContainerError;
use crate::deeponet::DeepOnetError;
use crate::field::FieldError;
use crate::pde::PdeError;
use crate::transfer::TransferError;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Invalid configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report: {0}")]
    Schema(String),
    #[error("checkpoint {0} not found (run train-source or finetune first)")]
    MissingCheckpoint(PathBuf),
    #[error("dataset {0} not found (run gen first)")]
    MissingDataset(PathBuf),
    #[error("solver failed on sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: PdeError,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Model(#[from] DeepOnetError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 1 for usage/configuration problems, 2 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
