use serde::{Deserialize, Serialize};

use super::{Result, TransferError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::deeponet::{combine, relative_l2_node, DeepONet};
use crate::rkhs::{ceod_node, median_bandwidth, GaussianKernel, DEFAULT_LAMBDA};

/// Weights and schedule of the target-domain loss
/// `L_r + λ₂·L_CEOD`, with `λ₂` raised by gradient ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridLossConfig {
    /// Initial and minimum `λ₂`; zero disables the discrepancy term.
    pub lambda2_init: f64,
    pub lambda2_lr: f64,
    pub lambda2_ceiling: f64,
    /// Ridge regularizer inside the discrepancy.
    pub ceod_lambda: f64,
    pub unlabeled_batch: usize,
    /// Labeled minibatch; the full labeled set is used when it is smaller.
    pub labeled_batch: usize,
}

impl Default for HybridLossConfig {
    fn default() -> Self {
        Self {
            lambda2_init: 10.0,
            lambda2_lr: 0.1,
            lambda2_ceiling: 1e3,
            ceod_lambda: DEFAULT_LAMBDA,
            unlabeled_batch: 64,
            labeled_batch: 64,
        }
    }
}

impl HybridLossConfig {
    /// Configuration with the discrepancy term switched off.
    pub fn without_ceod() -> Self {
        Self { lambda2_init: 0.0, ..Self::default() }
    }

    pub fn uses_ceod(&self) -> bool {
        self.lambda2_init > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TransferError::InvalidConfig(m.to_string()));
        if !(self.lambda2_init >= 0.0 && self.lambda2_init <= self.lambda2_ceiling && self.lambda2_ceiling.is_finite()) {
            return bad("lambda2 must satisfy 0 <= init <= ceiling < inf");
        }
        if !(self.lambda2_lr >= 0.0 && self.lambda2_lr.is_finite()) {
            return bad("lambda2 learning rate must be finite and non-negative");
        }
        if !(self.ceod_lambda > 0.0 && self.ceod_lambda.is_finite()) {
            return bad("ceod regularizer must be positive");
        }
        if self.unlabeled_batch < 2 || self.labeled_batch == 0 {
            return bad("unlabeled batch must be at least 2 and labeled batch positive");
        }
        Ok(())
    }

    /// One ascent step: `∂total/∂λ₂ = L_CEOD`, clipped to `[init, ceiling]`.
    pub fn ascend(&self, lambda2: f64, l_ceod: f64) -> f64 {
        (lambda2 + self.lambda2_lr * l_ceod.max(0.0)).clamp(self.lambda2_init, self.lambda2_ceiling)
    }
}

/// Gaussian kernels for the conditioning features and the outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeodKernels {
    pub x: GaussianKernel,
    pub y: GaussianKernel,
}

impl CeodKernels {
    /// Median-distance bandwidths of the given features and labels.
    pub fn fit(features: &Tensor, labels: &Tensor) -> Result<Self> {
        let x = GaussianKernel::new(median_bandwidth(&features.to_matrix()?))?;
        let y = GaussianKernel::new(median_bandwidth(&labels.to_matrix()?))?;
        Ok(Self { x, y })
    }
}

/// Loss handles on a tape.
#[derive(Debug, Clone, Copy)]
pub struct HybridTerms {
    pub total: Var,
    pub l_r: Var,
    /// Absent when `λ₂ = 0` or a side has fewer than two rows.
    pub l_ceod: Option<Var>,
}

/// Labeled-side tensors entering the loss.
pub(crate) struct Side {
    pub pred: Var,
    pub x_b1: Var,
}

pub(crate) fn combine_terms(
    tape: &mut Tape,
    labeled: Side,
    labels: &Tensor,
    unlabeled: Option<Side>,
    lambda2: f64,
    cfg: &HybridLossConfig,
    kernels: &CeodKernels,
) -> Result<HybridTerms> {
    let l_r = relative_l2_node(tape, labeled.pred, labels)?;
    let unlabeled = match unlabeled {
        Some(u) if lambda2 > 0.0 && tape.shape(labeled.x_b1)[0] >= 2 && tape.shape(u.x_b1)[0] >= 2 => u,
        _ => return Ok(HybridTerms { total: l_r, l_ceod: None, l_r }),
    };
    // The labeled conditional embedding is the fixed reference; only the
    // unlabeled side, built from live predictions, is pushed towards it.
    let p_x = tape.detach(labeled.x_b1);
    let p_y = tape.constant(labels.clone());
    let l_ceod = ceod_node(tape, p_x, p_y, unlabeled.x_b1, unlabeled.pred, cfg.ceod_lambda, &kernels.x, &kernels.y)?;
    let weighted = tape.scale(l_ceod, lambda2);
    let total = tape.add(l_r, weighted)?;
    Ok(HybridTerms { total, l_r, l_ceod: Some(l_ceod) })
}

/// Hybrid loss from raw inputs with a full forward pass on both sides.
/// `vars` come from [`DeepONet::register`].
#[allow(clippy::too_many_arguments)]
pub fn hybrid_loss(
    tape: &mut Tape,
    model: &DeepONet,
    vars: &[Var],
    labeled_inputs: &Tensor,
    labels: &Tensor,
    unlabeled_inputs: &Tensor,
    coords: &Tensor,
    lambda2: f64,
    cfg: &HybridLossConfig,
    kernels: &CeodKernels,
) -> Result<HybridTerms> {
    let c = tape.constant(coords.clone());
    let trunk = model.trunk_from(tape, vars, c, 0)?;
    let side = |tape: &mut Tape, inputs: &Tensor| -> Result<Side> {
        let x = tape.constant(inputs.clone());
        let b = model.branch_from(tape, vars, x, 0)?;
        let pred = combine(tape, b.out, trunk)?;
        Ok(Side { pred, x_b1: b.x_b1.expect("full branch pass evaluates the first dense layer") })
    };
    let lab = side(tape, labeled_inputs)?;
    let unl = if lambda2 > 0.0 { Some(side(tape, unlabeled_inputs)?) } else { None };
    combine_terms(tape, lab, labels, unl, lambda2, cfg, kernels)
}
