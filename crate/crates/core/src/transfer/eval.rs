use serde::{Deserialize, Serialize};

use super::{Result, TransferError};
use crate::autodiff::Tensor;
use crate::deeponet::{DeepONet, OperatorDataset};
use crate::field::RngStream;

/// Relative L2 error of every sample, `‖predᵢ − yᵢ‖ / ‖yᵢ‖`.
pub fn per_sample_rel_l2(pred: &Tensor, reference: &Tensor) -> Result<Vec<f64>> {
    if pred.shape() != reference.shape() || pred.rank() != 2 {
        return Err(TransferError::InvalidDataset(format!(
            "prediction {:?} and reference {:?} must be equal (N, d) shapes",
            pred.shape(),
            reference.shape()
        )));
    }
    let d = pred.shape()[1];
    pred.data()
        .chunks(d)
        .zip(reference.data().chunks(d))
        .map(|(p, y)| {
            let denom = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if denom == 0.0 {
                return Err(TransferError::ZeroReference);
            }
            let num = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            Ok(num / denom)
        })
        .collect()
}

/// Mean per-sample relative L2 error on a labeled test set.
pub fn evaluate(model: &DeepONet, test: &OperatorDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(TransferError::EmptyDataset);
    }
    let pred = model.predict(&test.branch_inputs, &test.coords)?;
    evaluate_predictions(&pred, test.outputs()?)
}

/// [`evaluate`] for precomputed predictions.
pub fn evaluate_predictions(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    if reference.shape().first().copied().unwrap_or(0) == 0 {
        return Err(TransferError::EmptyDataset);
    }
    let errs = per_sample_rel_l2(pred, reference)?;
    // Sorted summation keeps the result independent of sample order.
    let mut sorted = errs;
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

/// Test errors of one configuration across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub mode: String,
    pub n_t: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for one seed.
    pub std: f64,
    pub seconds: f64,
}

/// One line of the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub mode: String,
    pub n_t: usize,
    pub seeds: usize,
    pub mean_rel_l2: f64,
    pub std_rel_l2: f64,
    pub seconds: f64,
}

pub const REPORT_HEADER: &str = "task,mode,n_t,seeds,mean_rel_l2,std_rel_l2,seconds";

impl EvalReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            task: self.task.clone(),
            mode: self.mode.clone(),
            n_t: self.n_t,
            seeds: self.seeds.len(),
            mean_rel_l2: self.mean,
            std_rel_l2: self.std,
            seconds: self.seconds,
        }
    }
}

/// Mean and sample standard deviation of per-seed errors.
pub fn aggregate_seeds(task: &str, mode: &str, n_t: usize, runs: &[(u64, f64)], seconds: f64) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(TransferError::EmptyDataset);
    }
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.0).collect();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(TransferError::InvalidConfig(format!("duplicate seeds in {seeds:?}")));
    }
    let seeds: Vec<u64> = runs.iter().map(|r| r.0).collect();
    let per_seed: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (mean, var) = mean_var(&per_seed);
    Ok(EvalReport {
        task: task.to_string(),
        mode: mode.to_string(),
        n_t,
        seeds,
        per_seed,
        mean,
        std: var.sqrt(),
        seconds,
    })
}

/// Mean and unbiased variance (0 for a single value).
fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Mean and variance at one output index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub index: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqMoments {
    pub mean: Vec<f64>,
    /// Unbiased (`n − 1`) estimator.
    pub variance: Vec<f64>,
    pub points: Vec<PointSummary>,
    pub n_samples: usize,
}

/// Column-wise Monte Carlo moments of `(n, d)` samples.
pub fn sample_moments(samples: &Tensor, points: &[usize]) -> Result<UqMoments> {
    if samples.rank() != 2 || samples.shape()[0] < 2 {
        return Err(TransferError::InvalidConfig(format!("need at least 2 samples of shape (n, d), got {:?}", samples.shape())));
    }
    let (n, d) = (samples.shape()[0], samples.shape()[1]);
    if let Some(&bad) = points.iter().find(|&&p| p >= d) {
        return Err(TransferError::InvalidConfig(format!("point index {bad} out of range for {d} outputs")));
    }
    let mut mean = vec![0.0; d];
    for row in samples.data().chunks(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut variance = vec![0.0; d];
    for row in samples.data().chunks(d) {
        variance.iter_mut().zip(row.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    variance.iter_mut().for_each(|s| *s /= (n - 1) as f64);
    let points = points.iter().map(|&index| PointSummary { index, mean: mean[index], variance: variance[index] }).collect();
    Ok(UqMoments { mean, variance, points, n_samples: n })
}

/// Propagates random branch inputs through the surrogate. `sampler` returns
/// one flattened branch input per call; draws are sequential so results
/// depend only on `rng`, prediction runs in parallel.
pub fn uq_moments(
    model: &DeepONet,
    mut sampler: impl FnMut(&mut RngStream) -> Vec<f64>,
    coords: &Tensor,
    n_samples: usize,
    rng: &mut RngStream,
    points: &[usize],
) -> Result<UqMoments> {
    if n_samples < 2 {
        return Err(TransferError::InvalidConfig("uq needs at least 2 samples".into()));
    }
    let sample_shape = &model.arch().branch_input;
    let len: usize = sample_shape.iter().product();
    let mut data = Vec::with_capacity(n_samples * len);
    for _ in 0..n_samples {
        let s = sampler(rng);
        if s.len() != len {
            return Err(TransferError::InvalidConfig(format!("sampler returned {} values, expected {len}", s.len())));
        }
        data.extend(s);
    }
    let mut shape = vec![n_samples];
    shape.extend(sample_shape);
    let inputs = Tensor::new(shape, data).map_err(crate::deeponet::DeepOnetError::from)?;
    let pred = model.predict(&inputs, coords)?;
    sample_moments(&pred, points)
}
