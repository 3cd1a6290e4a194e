//! Parameter transfer, layer freezing, the hybrid target loss and
//! fine-tuning, evaluation and Monte Carlo moments of the surrogate.

mod eval;
mod finetune;
mod freeze;
mod hybrid;


pub use eval::{
    aggregate_seeds, evaluate, evaluate_predictions, per_sample_rel_l2, sample_moments, uq_moments, EvalReport,
    PointSummary, ReportRow, UqMoments, REPORT_HEADER,
};
pub use finetune::{finetune, FinetuneConfig, FinetuneHistory};
pub use freeze::{build_freeze_mask, transfer_params, FreezeMask, FreezePolicy};
pub use hybrid::{hybrid_loss, CeodKernels, HybridLossConfig, HybridTerms};

use thiserror::Error;

use crate::autodiff::AdError;
use crate::deeponet::DeepOnetError;
use crate::rkhs::RkhsError;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("unknown freeze policy {0:?} (expected paper-default, last-layer-only or all)")]
    UnknownPolicy(String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("loss became non-finite in epoch {epoch}")]
    NanLoss { epoch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("reference sample has zero norm")]
    ZeroReference,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] DeepOnetError),
    #[error(transparent)]
    Rkhs(#[from] RkhsError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

pub type Result<T> = std::result::Result<T, TransferError>;
