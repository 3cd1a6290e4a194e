//! Branch/trunk operator networks and source-domain training.

mod arch;
mod dataset;
mod model;
mod train;

#[cfg(test)]
mod tests;

pub use arch::{Activation, ArchConfig, BranchKind, ConvSpec, LayerKind, LayerShape};
pub use dataset::{DatasetRole, OperatorDataset};
pub use model::{combine, init_model, relative_l2, relative_l2_node, BranchVars, DeepONet, ForwardVars};
pub use train::{
    checkpoint_file, load_checkpoint, model_from_checkpoint, save_checkpoint, train_source, ModelOptimizer, TrainConfig,
};

use thiserror::Error;

use crate::autodiff::AdError;
use crate::container::ContainerError;

#[derive(Debug, Error)]
pub enum DeepOnetError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reference has zero norm")]
    ZeroReference,
    #[error("loss became non-finite in epoch {epoch}")]
    NanLoss { epoch: usize },
    #[error("checkpoint does not fit the architecture: {0}")]
    ArchMismatch(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

pub type Result<T> = std::result::Result<T, DeepOnetError>;
