use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::hybrid::{combine_terms, CeodKernels, HybridLossConfig, Side};
use super::{FreezeMask, Result, TransferError};
use crate::autodiff::{AdamConfig, Tape, Tensor, Var};
use crate::deeponet::{combine, DatasetRole, DeepONet, ModelOptimizer, OperatorDataset};
use crate::field::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub hybrid: HybridLossConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 500, adam: AdamConfig::default(), hybrid: HybridLossConfig::default() }
    }
}

/// Per-epoch averages over optimizer steps; `lambda2` is the value after
/// the epoch's last ascent step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FinetuneHistory {
    pub l_r: Vec<f64>,
    pub l_ceod: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// Bandwidths `(features, outputs)` used for the discrepancy.
    pub bandwidths: Option<(f64, f64)>,
}

/// Activations of the frozen prefix, computed once per run.
struct Cache {
    branch_start: usize,
    /// Input to branch layer `branch_start`.
    h: Tensor,
    /// First dense-layer output when that layer is frozen.
    x_b1: Option<Tensor>,
}

impl Cache {
    fn build(model: &DeepONet, inputs: &Tensor, mask: &FreezeMask) -> Result<Self> {
        let start = mask.branch_start();
        let h = if start == 0 { inputs.clone() } else { model.branch_features(inputs, start)? };
        let first_fc = model.first_fc_layer();
        let x_b1 = if start > first_fc { Some(model.branch_features(inputs, first_fc + 1)?) } else { None };
        Ok(Self { branch_start: start, h, x_b1 })
    }

    fn side(&self, tape: &mut Tape, model: &DeepONet, vars: &[Var], trunk: Var, rows: &[usize]) -> Result<Side> {
        let x = tape.constant(self.h.select_rows(rows)?);
        let b = model.branch_from(tape, vars, x, self.branch_start)?;
        let pred = combine(tape, b.out, trunk)?;
        let x_b1 = match (b.x_b1, &self.x_b1) {
            (Some(v), _) => v,
            (None, Some(t)) => tape.constant(t.select_rows(rows)?),
            (None, None) => unreachable!("first dense layer is either evaluated or cached"),
        };
        Ok(Side { pred, x_b1 })
    }
}

fn check_inputs(labeled: &OperatorDataset, unlabeled: Option<&OperatorDataset>, uses_ceod: bool) -> Result<()> {
    if labeled.role != DatasetRole::TargetLabeled {
        return Err(TransferError::InvalidDataset(format!("labeled data has role {}", labeled.role.as_str())));
    }
    if labeled.is_empty() {
        return Err(TransferError::EmptyDataset);
    }
    match unlabeled {
        Some(u) => {
            if u.role != DatasetRole::TargetUnlabeled {
                return Err(TransferError::InvalidDataset(format!("unlabeled data has role {}", u.role.as_str())));
            }
            if u.coords != labeled.coords {
                return Err(TransferError::InvalidDataset("labeled and unlabeled coordinates differ".into()));
            }
        }
        None if uses_ceod => {
            return Err(TransferError::InvalidDataset("the discrepancy term needs an unlabeled pool".into()));
        }
        None => {}
    }
    Ok(())
}

/// Fine-tunes the trainable part of `model` on target data: Adam descent on
/// the hybrid loss, interleaved with clipped gradient ascent on `λ₂`.
///
/// Layers before the first trainable one are evaluated once up front.
/// Kernel bandwidths are fixed at the start by the median heuristic on the
/// labeled features and labels.
pub fn finetune(
    model: &mut DeepONet,
    labeled: &OperatorDataset,
    unlabeled: Option<&OperatorDataset>,
    mask: &FreezeMask,
    cfg: &FinetuneConfig,
    rng: &mut RngStream,
) -> Result<FinetuneHistory> {
    cfg.hybrid.validate()?;
    let uses_ceod = cfg.hybrid.uses_ceod();
    check_inputs(labeled, unlabeled, uses_ceod)?;
    if mask.flags().len() != model.params().len() {
        return Err(TransferError::InvalidConfig("freeze mask does not fit the model".into()));
    }
    let labels = labeled.outputs()?;
    if model.params().iter().any(|p| !p.all_finite()) {
        return Err(TransferError::NanLoss { epoch: 0 });
    }
    let mut history = FinetuneHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }

    let lab_cache = Cache::build(model, &labeled.branch_inputs, mask)?;
    let unl_cache = match unlabeled {
        Some(u) if uses_ceod => Some((Cache::build(model, &u.branch_inputs, mask)?, u.len())),
        _ => None,
    };
    let trunk_h = if mask.trunk_start() == 0 {
        labeled.coords.clone()
    } else {
        model.trunk_features(&labeled.coords, mask.trunk_start())?
    };
    let kernels = if uses_ceod {
        let feats = model.branch_features(&labeled.branch_inputs, model.first_fc_layer() + 1)?;
        Some(CeodKernels::fit(&feats, labels)?)
    } else {
        None
    };
    history.bandwidths = kernels.map(|k| (k.x.bandwidth(), k.y.bandwidth()));
    // Placeholder kernels are never read when the discrepancy is off.
    let kernels = kernels.unwrap_or(CeodKernels { x: unit_kernel(), y: unit_kernel() });

    let mut opt = ModelOptimizer::new(model);
    let mut lambda2 = cfg.hybrid.lambda2_init;
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let full_batch = labeled.len() <= cfg.hybrid.labeled_batch;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        if !full_batch {
            rng.shuffle(&mut order);
        }
        let (mut sum_r, mut sum_c, mut steps) = (0.0, 0.0, 0usize);
        for rows in order.chunks(cfg.hybrid.labeled_batch) {
            let mut tape = Tape::new();
            let vars = model.register(&mut tape, |i| mask.is_trainable(i));
            let t_in = tape.constant(trunk_h.clone());
            let trunk = model.trunk_from(&mut tape, &vars, t_in, mask.trunk_start())?;
            let lab = lab_cache.side(&mut tape, model, &vars, trunk, rows)?;
            let unl = match &unl_cache {
                Some((cache, n_u)) => {
                    let k = cfg.hybrid.unlabeled_batch.min(*n_u);
                    let idx = rng.sample_indices(*n_u, k);
                    Some(cache.side(&mut tape, model, &vars, trunk, &idx)?)
                }
                None => None,
            };
            let finite = tape.value(lab.pred).all_finite() && unl.as_ref().is_none_or(|u| tape.value(u.pred).all_finite());
            if !finite {
                return Err(TransferError::NanLoss { epoch });
            }
            let batch_labels = if full_batch { labels.clone() } else { labels.select_rows(rows)? };
            let terms = combine_terms(&mut tape, lab, &batch_labels, unl, lambda2, &cfg.hybrid, &kernels)?;
            let total = tape.value(terms.total).item();
            let l_r = tape.value(terms.l_r).item();
            let l_ceod = terms.l_ceod.map_or(0.0, |v| tape.value(v).item());
            if !total.is_finite() {
                return Err(TransferError::NanLoss { epoch });
            }
            let grads = tape.backward(terms.total)?;
            opt.step(model, &vars, &grads, &cfg.adam, |i| mask.is_trainable(i))?;
            if terms.l_ceod.is_some() {
                lambda2 = cfg.hybrid.ascend(lambda2, l_ceod);
            }
            sum_r += l_r;
            sum_c += l_ceod;
            steps += 1;
        }
        history.l_r.push(sum_r / steps as f64);
        history.l_ceod.push(sum_c / steps as f64);
        history.lambda2.push(lambda2);
        history.epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(history)
}

fn unit_kernel() -> crate::rkhs::GaussianKernel {
    crate::rkhs::GaussianKernel::new(1.0).expect("unit bandwidth is valid")
}
