use rayon::prelude::*;

use super::arch::{ArchConfig, BranchKind, LayerKind, LayerShape};
use super::{DeepOnetError, Result};
use crate::autodiff::{Tape, Tensor, Var};
use crate::field::RngStream;

/// Samples per independent tape during batched inference.
const PREDICT_CHUNK: usize = 64;

/// Branch/trunk operator network `G(x)(ζ) = Σᵢ bᵢ(x)·tᵢ(ζ)`.
///
/// Parameters are stored layer by layer (weight then bias), branch layers
/// first. Dense weights are `[in, out]`, convolution kernels
/// `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepONet {
    arch: ArchConfig,
    branch: Vec<LayerShape>,
    trunk: Vec<LayerShape>,
    params: Vec<Tensor>,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `(N, d)` predictions.
    pub pred: Var,
    /// `(N, p)` branch coefficients.
    pub branch_out: Var,
    /// `(d, p)` trunk basis.
    pub trunk_out: Var,
    /// `(N, width)` output of the first fully-connected branch layer.
    pub x_b1: Var,
}

/// Result of running the branch from some layer onward.
#[derive(Debug, Clone, Copy)]
pub struct BranchVars {
    pub out: Var,
    /// Present when the first dense layer was evaluated in this pass.
    pub x_b1: Option<Var>,
}

pub fn init_model(arch: &ArchConfig, rng: &mut RngStream) -> Result<DeepONet> {
    let branch = arch.branch_layers()?;
    let trunk = arch.trunk_layers()?;
    let mut params = Vec::with_capacity(2 * (branch.len() + trunk.len()));
    for layer in branch.iter().chain(&trunk) {
        let (fan_in, fan_out) = layer.fans();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = layer.weight.iter().product();
        let w: Vec<f64> = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
        params.push(Tensor::new(layer.weight.clone(), w)?);
        params.push(Tensor::zeros(&[layer.bias]));
    }
    Ok(DeepONet { arch: arch.clone(), branch, trunk, params })
}

impl DeepONet {
    /// Assembles a model from explicit parameter tensors in storage order.
    pub fn from_params(arch: &ArchConfig, params: Vec<Tensor>) -> Result<Self> {
        let branch = arch.branch_layers()?;
        let trunk = arch.trunk_layers()?;
        let expected: Vec<(String, Vec<usize>)> = branch
            .iter()
            .chain(&trunk)
            .flat_map(|l| [(format!("{}.weight", l.name), l.weight.clone()), (format!("{}.bias", l.name), vec![l.bias])])
            .collect();
        if expected.len() != params.len() {
            return Err(DeepOnetError::ArchMismatch(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&params) {
            if t.shape() != shape.as_slice() {
                return Err(DeepOnetError::ArchMismatch(format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
            if !t.all_finite() {
                return Err(DeepOnetError::ArchMismatch(format!("{name} holds non-finite values")));
            }
        }
        Ok(Self { arch: arch.clone(), branch, trunk, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn branch_layers(&self) -> &[LayerShape] {
        &self.branch
    }

    pub fn trunk_layers(&self) -> &[LayerShape] {
        &self.trunk
    }

    /// `name.weight` / `name.bias` for every tensor, in storage order.
    pub fn param_names(&self) -> Vec<String> {
        self.branch
            .iter()
            .chain(&self.trunk)
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Storage indices `(weight, bias)` of branch layer `i`.
    pub fn branch_param_indices(&self, i: usize) -> (usize, usize) {
        (2 * i, 2 * i + 1)
    }

    /// Storage indices `(weight, bias)` of trunk layer `i`.
    pub fn trunk_param_indices(&self, i: usize) -> (usize, usize) {
        let off = 2 * self.branch.len();
        (off + 2 * i, off + 2 * i + 1)
    }

    /// Index of the first dense branch layer.
    pub fn first_fc_layer(&self) -> usize {
        self.arch.branch_conv.len()
    }

    /// Puts every parameter on `tape`; `trainable(i)` selects which ones
    /// receive gradients.
    pub fn register(&self, tape: &mut Tape, trainable: impl Fn(usize) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| if trainable(i) { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    fn check_branch_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 1 + self.arch.branch_input.len() || shape[1..] != self.arch.branch_input[..] {
            return Err(DeepOnetError::ShapeMismatch(format!(
                "branch input {:?} does not match [N] + {:?}",
                shape, self.arch.branch_input
            )));
        }
        Ok(())
    }

    fn check_coords(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.arch.coord_dim {
            return Err(DeepOnetError::ShapeMismatch(format!(
                "coords {:?} do not match [d, {}]",
                shape, self.arch.coord_dim
            )));
        }
        Ok(())
    }

    /// Runs branch layers `start..`. For `start = 0`, `x` is the raw
    /// `(N, ...)` input; otherwise it is the activation after layer
    /// `start - 1`.
    pub fn branch_from(&self, tape: &mut Tape, vars: &[Var], x: Var, start: usize) -> Result<BranchVars> {
        self.branch_range(tape, vars, x, start, self.branch.len())
    }

    fn branch_range(&self, tape: &mut Tape, vars: &[Var], x: Var, start: usize, end: usize) -> Result<BranchVars> {
        let mut h = x;
        if start == 0 {
            self.check_branch_input(tape.shape(x))?;
            if self.arch.branch_kind == BranchKind::Cnn {
                let s = tape.shape(h).to_vec();
                h = tape.reshape(h, &[s[0], 1, s[1], s[2]])?;
            }
        }
        let slope = self.arch.slope();
        let first_fc = self.first_fc_layer();
        let last = self.branch.len() - 1;
        let mut x_b1 = None;
        for (i, layer) in self.branch.iter().enumerate().take(end).skip(start) {
            let (wi, bi) = self.branch_param_indices(i);
            h = match layer.kind {
                LayerKind::Conv { stride } => {
                    let c = tape.conv2d(h, vars[wi], stride)?;
                    tape.add_bias(c, vars[bi])?
                }
                LayerKind::Dense => {
                    if tape.shape(h).len() > 2 {
                        h = tape.flatten(h)?;
                    }
                    let m = tape.matmul(h, vars[wi])?;
                    tape.add_bias(m, vars[bi])?
                }
            };
            if i != last {
                h = tape.leaky_relu(h, slope);
            }
            if i == first_fc {
                x_b1 = Some(h);
            }
        }
        Ok(BranchVars { out: h, x_b1 })
    }

    /// Runs trunk layers `start..` on `(d, ·)` inputs.
    pub fn trunk_from(&self, tape: &mut Tape, vars: &[Var], x: Var, start: usize) -> Result<Var> {
        if start == 0 {
            self.check_coords(tape.shape(x))?;
        }
        let slope = self.arch.slope();
        let last = self.trunk.len() - 1;
        let mut h = x;
        for i in start..self.trunk.len() {
            let (wi, bi) = self.trunk_param_indices(i);
            let m = tape.matmul(h, vars[wi])?;
            h = tape.add_bias(m, vars[bi])?;
            if i != last {
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok(h)
    }

    /// Full forward pass from raw inputs.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], branch_input: Var, coords: Var) -> Result<ForwardVars> {
        let b = self.branch_from(tape, vars, branch_input, 0)?;
        let t = self.trunk_from(tape, vars, coords, 0)?;
        let pred = combine(tape, b.out, t)?;
        Ok(ForwardVars { pred, branch_out: b.out, trunk_out: t, x_b1: b.x_b1.expect("branch has a dense layer") })
    }

    /// Branch activation after layers `0..upto` (no gradients).
    pub fn branch_features(&self, inputs: &Tensor, upto: usize) -> Result<Tensor> {
        self.check_branch_input(inputs.shape())?;
        let n = inputs.shape()[0];
        let chunks: Vec<Tensor> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(PREDICT_CHUNK)
            .map(|rows| -> Result<Tensor> {
                let mut tape = Tape::new();
                let vars = self.register(&mut tape, |_| false);
                let h = tape.constant(inputs.select_rows(rows)?);
                let h = self.branch_range(&mut tape, &vars, h, 0, upto)?.out;
                Ok(tape.value(h).clone())
            })
            .collect::<Result<_>>()?;
        concat_rows(chunks)
    }

    /// Trunk activation after layers `0..upto` (no gradients).
    pub fn trunk_features(&self, coords: &Tensor, upto: usize) -> Result<Tensor> {
        self.check_coords(coords.shape())?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, |_| false);
        let slope = self.arch.slope();
        let last = self.trunk.len() - 1;
        let mut h = tape.constant(coords.clone());
        for i in 0..upto {
            let (wi, bi) = self.trunk_param_indices(i);
            let m = tape.matmul(h, vars[wi])?;
            h = tape.add_bias(m, vars[bi])?;
            if i != last {
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok(tape.value(h).clone())
    }

    /// Predictions `(N, d)` for a batch of branch inputs at shared coords.
    pub fn predict(&self, branch_inputs: &Tensor, coords: &Tensor) -> Result<Tensor> {
        let basis = self.trunk_features(coords, self.trunk.len())?;
        let coeffs = self.branch_features(branch_inputs, self.branch.len())?;
        let (n, d, p) = (coeffs.shape()[0], basis.shape()[0], self.arch.p);
        let mut out = vec![0.0; n * d];
        crate::kernels::gemm(
            n,
            p,
            d,
            1.0,
            crate::kernels::View::row_major(coeffs.data(), p),
            crate::kernels::View::transposed(basis.data(), p),
            0.0,
            &mut out,
        );
        Ok(Tensor::new(vec![n, d], out)?)
    }
}

/// `pred = branch · trunkᵀ`, i.e. `pred[n][j] = Σᵢ branch[n][i]·trunk[j][i]`.
pub fn combine(tape: &mut Tape, branch_out: Var, trunk_out: Var) -> Result<Var> {
    let t = tape.transpose(trunk_out)?;
    Ok(tape.matmul(branch_out, t)?)
}

fn concat_rows(chunks: Vec<Tensor>) -> Result<Tensor> {
    let mut shape = chunks.first().map(|t| t.shape().to_vec()).unwrap_or_else(|| vec![0]);
    shape[0] = chunks.iter().map(|t| t.shape()[0]).sum();
    let data = chunks.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Tensor::new(shape, data)?)
}

/// `‖pred − reference‖₂ / ‖reference‖₂` over all entries.
pub fn relative_l2(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    if pred.shape() != reference.shape() {
        return Err(DeepOnetError::ShapeMismatch(format!("{:?} vs {:?}", pred.shape(), reference.shape())));
    }
    let denom = reference.norm();
    if denom == 0.0 {
        return Err(DeepOnetError::ZeroReference);
    }
    let num: f64 = pred.data().iter().zip(reference.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / denom)
}

/// Tape version of [`relative_l2`] with a constant reference.
pub fn relative_l2_node(tape: &mut Tape, pred: Var, reference: &Tensor) -> Result<Var> {
    if tape.shape(pred) != reference.shape() {
        return Err(DeepOnetError::ShapeMismatch(format!("{:?} vs {:?}", tape.shape(pred), reference.shape())));
    }
    let denom = reference.norm();
    if denom == 0.0 {
        return Err(DeepOnetError::ZeroReference);
    }
    let r = tape.constant(reference.clone());
    let diff = tape.sub(pred, r)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    let norm = tape.sqrt(total);
    Ok(tape.scale(norm, 1.0 / denom))
}
