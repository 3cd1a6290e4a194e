use crate::kernels::{gemm, View};
use crate::linalg::{self, CholeskyFactor, DenseMatrix};

use super::{AdError, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Sqrt(Var),
    Exp(Var),
    Square(Var),
    Trace(Var),
    LeakyRelu(Var, f64),
    Conv2d { input: Var, kernels: Var, stride: usize },
    AddBias(Var, Var),
    Concat(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SqDist(Var, Var),
    SolveSpd { a: Var, b: Var, factor: CholeskyFactor },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::Square(..) => "square",
            Op::Trace(..) => "trace",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Conv2d { .. } => "conv2d",
            Op::AddBias(..) => "add_bias",
            Op::Concat(..) => "concat",
            Op::GatherRows(..) => "gather_rows",
            Op::SqDist(..) => "sq_dist",
            Op::SolveSpd { .. } => "solve_spd",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::AddBias(a, b) | Op::SqDist(a, b) => vec![*a, *b],
            Op::Conv2d { input, kernels, .. } => vec![*input, *kernels],
            Op::SolveSpd { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Sqrt(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Trace(a)
            | Op::LeakyRelu(a, _)
            | Op::GatherRows(a, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of one forward pass.
///
/// Nodes are stored in creation order, which is a topological order; the
/// backward sweep visits them strictly in reverse. Leaves created with
/// [`Tape::param`] receive gradients, leaves created with
/// [`Tape::constant`] do not, and neither does anything computed only from
/// constants.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

/// Gradients of a scalar output, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Borrowed gradient data, `None` when no gradient reached `v`.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> AdError {
    AdError::ShapeMismatch(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that panics as soon as any node produces NaN or infinity.
    pub fn with_finite_checks() -> Self {
        Self { nodes: Vec::new(), check_finite: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Constant copy of `v`: same value, no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.check_finite {
            assert!(value.all_finite(), "non-finite value produced by {}", op.name());
        }
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn binary_same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Element-wise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("div", a, b)?;
        let v = self.zip_map(a, b, |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            View::row_major(self.value(a).data(), k),
            View::row_major(self.value(b).data(), n),
            0.0,
            &mut out,
        );
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(AdError::ShapeMismatch(format!("transpose needs a matrix, got {s:?}")));
        }
        let v = Tensor::new(vec![s[1], s[0]], transpose_data(self.value(a).data(), s[0], s[1]))?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Collapses all axes after the first: `(N, ...) -> (N, rest)`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.is_empty() {
            return Err(AdError::ShapeMismatch("flatten of a scalar".into()));
        }
        let shape = [s[0], s[1..].iter().product()];
        self.reshape(a, &shape)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(AdError::ShapeMismatch(format!("trace needs a square matrix, got {s:?}")));
        }
        let d = self.value(a).data();
        let t: f64 = (0..s[0]).map(|i| d[i * s[0] + i]).sum();
        Ok(self.push(Tensor::scalar(t), Op::Trace(a)))
    }

    /// `x` for `x >= 0`, `slope·x` otherwise. The derivative at exactly zero
    /// is taken from the positive branch.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.map(a, |x| if x >= 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    /// Valid-padding 2-D convolution.
    ///
    /// `input` is `(N, C, H, W)`, `kernels` is `(O, C, k, k)`; the result is
    /// `(N, O, (H-k)/stride+1, (W-k)/stride+1)`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernels).to_vec();
        let geom = ConvGeom::new(&si, &sk, stride)?;
        let x = self.value(input).data();
        let w = self.value(kernels).data();
        let mut out = vec![0.0; geom.n * geom.o * geom.spatial_out()];
        let mut cols = vec![0.0; geom.patch() * geom.spatial_out()];
        for n in 0..geom.n {
            geom.im2col(&x[n * geom.sample_in()..(n + 1) * geom.sample_in()], &mut cols);
            let dst = &mut out[n * geom.o * geom.spatial_out()..(n + 1) * geom.o * geom.spatial_out()];
            gemm(
                geom.o,
                geom.patch(),
                geom.spatial_out(),
                1.0,
                View::row_major(w, geom.patch()),
                View::row_major(&cols, geom.spatial_out()),
                0.0,
                dst,
            );
        }
        let v = Tensor::new(vec![geom.n, geom.o, geom.ho, geom.wo], out)?;
        Ok(self.push(v, Op::Conv2d { input, kernels, stride }))
    }

    /// Adds a per-channel bias: `b` has length `C` where `x` is `(N, C)` or
    /// `(N, C, H, W)`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(b).to_vec();
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(shape_err("add_bias", &sx, &sb));
        }
        let inner: usize = sx[2..].iter().product();
        let c = sx[1];
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bias[(i / inner) % c];
        }
        let v = Tensor::new(sx, data)?;
        Ok(self.push(v, Op::AddBias(x, b)))
    }

    /// Stacks tensors along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| AdError::ShapeMismatch("concat of nothing".into()))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err("concat", self.shape(*first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Selects first-axis slices (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(a).select_rows(rows)?;
        Ok(self.push(v, Op::GatherRows(a, rows.to_vec())))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (`m x d`)
    /// and `b` (`n x d`).
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err("sq_dist", &sa, &sb));
        }
        let v = Tensor::new(vec![sa[0], sb[0]], pairwise_sq_dist(self.value(a).data(), self.value(b).data(), sa[1]))?;
        Ok(self.push(v, Op::SqDist(a, b)))
    }

    /// `A⁻¹·B` for symmetric positive definite `A`.
    pub fn solve_spd(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sa[0] != sa[1] || sb.len() != 2 || sb[0] != sa[0] {
            return Err(shape_err("solve_spd", &sa, &sb));
        }
        let factor = linalg::cholesky(&self.value(a).to_matrix()?, 0.0)?;
        let x = linalg::solve_spd(&factor, &self.value(b).to_matrix()?)?;
        let v = Tensor::from_matrix(&x);
        Ok(self.push(v, Op::SolveSpd { a, b, factor }))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(AdError::NonScalarOutput(self.shape(output).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| axpy(ga, 1.0, g));
                self.accumulate(grads, *b, |gb| axpy(gb, 1.0, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| axpy(ga, 1.0, g));
                self.accumulate(grads, *b, |gb| axpy(gb, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * vb[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * va[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] / vb[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |ga| axpy(ga, *c, g)),
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                // dA = G·Bᵀ, dB = Aᵀ·G
                self.accumulate(grads, *a, |ga| {
                    gemm(m, n, k, 1.0, View::row_major(g, n), View::transposed(vb, n), 1.0, ga)
                });
                self.accumulate(grads, *b, |gb| {
                    gemm(k, m, n, 1.0, View::transposed(va, k), View::row_major(g, n), 1.0, gb)
                });
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let gt = transpose_data(g, s[1], s[0]);
                self.accumulate(grads, *a, |ga| axpy(ga, 1.0, &gt));
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |ga| axpy(ga, 1.0, g)),
            Op::Sum(a) => self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::Sqrt(a) => self.accumulate(grads, *a, |ga| {
                for i in 0..ga.len() {
                    // Subgradient 0 at the kink of sqrt.
                    if y[i] > 0.0 {
                        ga[i] += g[i] / (2.0 * y[i]);
                    }
                }
            }),
            Op::Exp(a) => self.accumulate(grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * y[i];
                }
            }),
            Op::Square(a) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += 2.0 * va[i] * g[i];
                    }
                });
            }
            Op::Trace(a) => {
                let n = self.shape(*a)[0];
                self.accumulate(grads, *a, |ga| {
                    for i in 0..n {
                        ga[i * n + i] += g[0];
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += if va[i] >= 0.0 { g[i] } else { slope * g[i] };
                    }
                });
            }
            Op::Conv2d { input, kernels, stride } => {
                let geom = ConvGeom::new(self.shape(*input), self.shape(*kernels), *stride)?;
                let x = self.value(*input).data();
                let w = self.value(*kernels).data();
                let so = geom.spatial_out();
                let mut cols = vec![0.0; geom.patch() * so];
                if self.nodes[kernels.0].needs_grad {
                    let mut gw = vec![0.0; w.len()];
                    for n in 0..geom.n {
                        geom.im2col(&x[n * geom.sample_in()..(n + 1) * geom.sample_in()], &mut cols);
                        let gn = &g[n * geom.o * so..(n + 1) * geom.o * so];
                        gemm(
                            geom.o,
                            so,
                            geom.patch(),
                            1.0,
                            View::row_major(gn, so),
                            View::transposed(&cols, so),
                            1.0,
                            &mut gw,
                        );
                    }
                    self.accumulate(grads, *kernels, |gk| axpy(gk, 1.0, &gw));
                }
                if self.nodes[input.0].needs_grad {
                    let mut gx = vec![0.0; x.len()];
                    for n in 0..geom.n {
                        let gn = &g[n * geom.o * so..(n + 1) * geom.o * so];
                        gemm(
                            geom.patch(),
                            geom.o,
                            so,
                            1.0,
                            View::transposed(w, geom.patch()),
                            View::row_major(gn, so),
                            0.0,
                            &mut cols,
                        );
                        geom.col2im_add(&cols, &mut gx[n * geom.sample_in()..(n + 1) * geom.sample_in()]);
                    }
                    self.accumulate(grads, *input, |gi| axpy(gi, 1.0, &gx));
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |gx| axpy(gx, 1.0, g));
                let sx = self.shape(*x);
                let c = sx[1];
                let inner: usize = sx[2..].iter().product();
                self.accumulate(grads, *b, |gb| {
                    for (i, v) in g.iter().enumerate() {
                        gb[(i / inner) % c] += v;
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let slice = &g[offset..offset + len];
                    self.accumulate(grads, p, |gp| axpy(gp, 1.0, slice));
                    offset += len;
                }
            }
            Op::GatherRows(a, rows) => {
                let w = self.value(*a).row_len();
                self.accumulate(grads, *a, |ga| {
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(&mut ga[r * w..(r + 1) * w], 1.0, &g[k * w..(k + 1) * w]);
                    }
                });
            }
            Op::SqDist(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, n, d) = (sa[0], sb[0], sa[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                // dA_i = 2·(Σ_j G_ij)·a_i − 2·(G·B)_i
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        let rs: f64 = g[i * n..(i + 1) * n].iter().sum();
                        axpy(&mut ga[i * d..(i + 1) * d], 2.0 * rs, &va[i * d..(i + 1) * d]);
                    }
                    gemm(m, n, d, -2.0, View::row_major(g, n), View::row_major(vb, d), 1.0, ga);
                });
                // dB_j = 2·(Σ_i G_ij)·b_j − 2·(Gᵀ·A)_j
                self.accumulate(grads, *b, |gb| {
                    for j in 0..n {
                        let cs: f64 = (0..m).map(|i| g[i * n + j]).sum();
                        axpy(&mut gb[j * d..(j + 1) * d], 2.0 * cs, &vb[j * d..(j + 1) * d]);
                    }
                    gemm(n, m, d, -2.0, View::transposed(g, n), View::row_major(va, d), 1.0, gb);
                });
            }
            Op::SolveSpd { a, b, factor } => {
                // C = A⁻¹B: dB = A⁻¹Ḡ, dA = −(A⁻¹Ḡ)·Cᵀ, symmetrized.
                let n = factor.size();
                let m = self.shape(*b)[1];
                let gbar = DenseMatrix::from_vec(n, m, g.to_vec())?;
                let solved = linalg::solve_spd(factor, &gbar)?;
                let gb_data = solved.data();
                self.accumulate(grads, *b, |gb| axpy(gb, 1.0, gb_data));
                if self.nodes[a.0].needs_grad {
                    let mut ga_full = vec![0.0; n * n];
                    gemm(n, m, n, -1.0, View::row_major(gb_data, m), View::transposed(y, m), 0.0, &mut ga_full);
                    self.accumulate(grads, *a, |ga| {
                        for i in 0..n {
                            for j in 0..n {
                                ga[i * n + j] += 0.5 * (ga_full[i * n + j] + ga_full[j * n + i]);
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(slot);
    }
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn transpose_data(d: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = d[i * cols + j];
        }
    }
    out
}

/// `out[i][j] = ‖a_i − b_j‖²` for row-major `a` (`m x dim`) and `b` (`n x dim`).
pub(crate) fn pairwise_sq_dist(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let m = a.len().checked_div(dim).unwrap_or(0);
    let n = b.len().checked_div(dim).unwrap_or(0);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ai = &a[i * dim..(i + 1) * dim];
        for j in 0..n {
            let bj = &b[j * dim..(j + 1) * dim];
            out[i * n + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    out
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(si: &[usize], sk: &[usize], stride: usize) -> Result<Self> {
        if si.len() != 4 || sk.len() != 4 || sk[1] != si[1] || sk[2] != sk[3] || stride == 0 {
            return Err(shape_err("conv2d", si, sk));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (o, k) = (sk[0], sk[2]);
        if k == 0 || h < k || w < k {
            return Err(shape_err("conv2d", si, sk));
        }
        Ok(Self { n, c, h, w, o, k, stride, ho: (h - k) / stride + 1, wo: (w - k) / stride + 1 })
    }

    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn spatial_out(&self) -> usize {
        self.ho * self.wo
    }

    fn sample_in(&self) -> usize {
        self.c * self.h * self.w
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let so = self.spatial_out();
        for c in 0..self.c {
            for i in 0..self.k {
                for j in 0..self.k {
                    let row = (c * self.k + i) * self.k + j;
                    let dst = &mut cols[row * so..(row + 1) * so];
                    for y in 0..self.ho {
                        let src_row = (c * self.h + y * self.stride + i) * self.w;
                        for xx in 0..self.wo {
                            dst[y * self.wo + xx] = x[src_row + xx * self.stride + j];
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], gx: &mut [f64]) {
        let so = self.spatial_out();
        for c in 0..self.c {
            for i in 0..self.k {
                for j in 0..self.k {
                    let row = (c * self.k + i) * self.k + j;
                    let src = &cols[row * so..(row + 1) * so];
                    for y in 0..self.ho {
                        let dst_row = (c * self.h + y * self.stride + i) * self.w;
                        for xx in 0..self.wo {
                            gx[dst_row + xx * self.stride + j] += src[y * self.wo + xx];
                        }
                    }
                }
            }
        }
    }
}
