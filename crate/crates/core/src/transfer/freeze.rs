use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Result, TransferError};
use crate::deeponet::{ArchConfig, DeepONet};

/// Which layers stay trainable after transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezePolicy {
    /// Branch fully-connected layers plus the last trunk layer.
    PaperDefault,
    /// Only the final layer of each net.
    LastLayerOnly,
    All,
}

impl FromStr for FreezePolicy {
    type Err = TransferError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-default" => Ok(Self::PaperDefault),
            "last-layer-only" => Ok(Self::LastLayerOnly),
            "all" => Ok(Self::All),
            other => Err(TransferError::UnknownPolicy(other.to_string())),
        }
    }
}

/// Per-parameter-tensor trainability flags, in model storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    trainable: Vec<bool>,
    /// First branch / trunk layer with trainable parameters; everything
    /// before is frozen and can be precomputed.
    branch_start: usize,
    trunk_start: usize,
}

impl FreezeMask {
    pub fn is_trainable(&self, i: usize) -> bool {
        self.trainable[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.trainable
    }

    pub fn branch_start(&self) -> usize {
        self.branch_start
    }

    pub fn trunk_start(&self) -> usize {
        self.trunk_start
    }

    /// Trainable scalar count.
    pub fn trainable_scalars(&self, model: &DeepONet) -> usize {
        model.params().iter().zip(&self.trainable).filter(|(_, &t)| t).map(|(p, _)| p.len()).sum()
    }
}

pub fn build_freeze_mask(model: &DeepONet, policy: FreezePolicy) -> Result<FreezeMask> {
    let nb = model.branch_layers().len();
    let nt = model.trunk_layers().len();
    let first_fc = model.first_fc_layer();
    let (branch_layers, trunk_layers): (Vec<bool>, Vec<bool>) = match policy {
        FreezePolicy::PaperDefault => ((0..nb).map(|i| i >= first_fc).collect(), (0..nt).map(|i| i + 1 == nt).collect()),
        FreezePolicy::LastLayerOnly => ((0..nb).map(|i| i + 1 == nb).collect(), (0..nt).map(|i| i + 1 == nt).collect()),
        FreezePolicy::All => (vec![true; nb], vec![true; nt]),
    };
    let trainable: Vec<bool> = branch_layers.iter().chain(&trunk_layers).flat_map(|&t| [t, t]).collect();
    let branch_start = branch_layers.iter().position(|&t| t).unwrap_or(nb);
    let trunk_start = trunk_layers.iter().position(|&t| t).unwrap_or(nt);
    if !trainable.iter().any(|&t| t) {
        return Err(TransferError::InvalidConfig("freeze policy leaves nothing trainable".into()));
    }
    Ok(FreezeMask { trainable, branch_start, trunk_start })
}

/// Deep copy of the source model for use as the target initialization.
pub fn transfer_params(source: &DeepONet, target_arch: &ArchConfig) -> Result<DeepONet> {
    if source.arch() != target_arch {
        return Err(TransferError::ArchMismatch(format!(
            "source architecture {:?} differs from target {:?}",
            source.arch(),
            target_arch
        )));
    }
    Ok(source.clone())
}
