use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetRole, OperatorDataset};
use super::model::{relative_l2_node, DeepONet};
use super::{ArchConfig, DeepOnetError, Result};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Gradients, Tape, Tensor, Var};
use crate::container::TensorFile;
use crate::field::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Random subset of evaluation coordinates per minibatch; `None` uses
    /// all of them.
    pub coord_batch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, batch_size: 32, adam: AdamConfig::default(), coord_batch: None }
    }
}

/// Adam moments for every parameter tensor of a model.
#[derive(Debug, Clone)]
pub struct ModelOptimizer {
    states: Vec<AdamState>,
}

impl ModelOptimizer {
    pub fn new(model: &DeepONet) -> Self {
        Self { states: model.params().iter().map(|p| AdamState::new(p.len())).collect() }
    }

    /// One Adam update on the parameters selected by `trainable`.
    pub fn step(
        &mut self,
        model: &mut DeepONet,
        vars: &[Var],
        grads: &Gradients,
        cfg: &AdamConfig,
        trainable: impl Fn(usize) -> bool,
    ) -> Result<()> {
        for (i, param) in model.params_mut().iter_mut().enumerate() {
            if !trainable(i) {
                continue;
            }
            let zeros;
            let g = match grads.raw(vars[i]) {
                Some(g) => g,
                None => {
                    zeros = vec![0.0; param.len()];
                    &zeros
                }
            };
            adam_step(param.data_mut(), g, &mut self.states[i], cfg)?;
        }
        Ok(())
    }
}

/// Selects columns of a `(N, d)` tensor.
pub(crate) fn select_columns(t: &Tensor, cols: &[usize]) -> Result<Tensor> {
    let (n, d) = (t.shape()[0], t.shape()[1]);
    let mut data = Vec::with_capacity(n * cols.len());
    for r in 0..n {
        let row = &t.data()[r * d..(r + 1) * d];
        data.extend(cols.iter().map(|&c| row[c]));
    }
    Ok(Tensor::new(vec![n, cols.len()], data)?)
}

/// Minibatch Adam on the relative-L2 loss; returns the mean training loss
/// of each epoch.
pub fn train_source(model: &mut DeepONet, data: &OperatorDataset, cfg: &TrainConfig, rng: &mut RngStream) -> Result<Vec<f64>> {
    if data.role != DatasetRole::SourceTrain {
        return Err(DeepOnetError::InvalidDataset(format!("training needs source-train data, got {}", data.role.as_str())));
    }
    if cfg.batch_size == 0 {
        return Err(DeepOnetError::InvalidConfig("batch size must be positive".into()));
    }
    let outputs = data.outputs()?;
    let d = data.num_coords();
    let mut opt = ModelOptimizer::new(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for rows in order.chunks(cfg.batch_size) {
            let (coords, y) = match cfg.coord_batch {
                Some(c) if c < d => {
                    let cols = rng.sample_indices(d, c);
                    (data.coords.select_rows(&cols)?, select_columns(&outputs.select_rows(rows)?, &cols)?)
                }
                _ => (data.coords.clone(), outputs.select_rows(rows)?),
            };
            let mut tape = Tape::new();
            let vars = model.register(&mut tape, |_| true);
            let x = tape.constant(data.branch_inputs.select_rows(rows)?);
            let c = tape.constant(coords);
            let fwd = model.forward(&mut tape, &vars, x, c)?;
            let loss = relative_l2_node(&mut tape, fwd.pred, &y)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(DeepOnetError::NanLoss { epoch });
            }
            let grads = tape.backward(loss)?;
            opt.step(model, &vars, &grads, &cfg.adam, |_| true)?;
            total += value;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok(history)
}

pub fn checkpoint_file(model: &DeepONet) -> TensorFile {
    let mut f = TensorFile::new();
    for (name, t) in model.param_names().into_iter().zip(model.params()) {
        f.push(name, t.clone());
    }
    f
}

pub fn model_from_checkpoint(file: TensorFile, arch: &ArchConfig) -> Result<DeepONet> {
    let expected = arch.branch_layers()?.into_iter().chain(arch.trunk_layers()?).count() * 2;
    if file.tensors.len() != expected {
        return Err(DeepOnetError::ArchMismatch(format!(
            "checkpoint holds {} tensors, architecture needs {expected}",
            file.tensors.len()
        )));
    }
    let (names, params): (Vec<String>, Vec<Tensor>) = file.tensors.into_iter().unzip();
    let model = DeepONet::from_params(arch, params)?;
    for (got, want) in names.iter().zip(model.param_names()) {
        if *got != want {
            return Err(DeepOnetError::ArchMismatch(format!("tensor {got:?} where {want:?} was expected")));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &DeepONet, path: &Path) -> Result<()> {
    Ok(checkpoint_file(model).write(path)?)
}

/// Reads a checkpoint; the architecture is supplied by the caller because
/// the container stores shapes but not strides or activations.
pub fn load_checkpoint(path: &Path, arch: &ArchConfig) -> Result<DeepONet> {
    model_from_checkpoint(TensorFile::read(path)?, arch)
}
