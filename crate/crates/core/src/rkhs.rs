//! Kernel mean embeddings: Gram matrices, MMD and the conditional embedding
//! operator discrepancy (CEOD) between two conditional datasets.
//!
//! With input Grams `K`, output Grams `L` and regularized
//! `A_p = K_pp + λn₁I`, `A_q = K_qq + λn₂I`, the discrepancy is
//!
//! ```text
//! Tr(A_p⁻¹ L_pp A_p⁻¹ K_pp) + Tr(A_q⁻¹ L_qq A_q⁻¹ K_qq) − 2·Tr(A_p⁻¹ L_pq A_q⁻¹ K_qp)
//! ```
//!
//! the squared Hilbert–Schmidt distance between the two empirical
//! conditional embedding operators.

use thiserror::Error;

use crate::autodiff::{pairwise_sq_dist, AdError, Tape, Tensor, Var};
use crate::linalg::{self, CholeskyFactor, DenseMatrix, LinalgError};

/// Default Tikhonov regularizer `λ`.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RkhsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("regularizer must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

pub type Result<T> = std::result::Result<T, RkhsError>;

pub trait Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64;
}

/// `k(a, b) = exp(−‖a − b‖² / (2γ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    bandwidth: f64,
}

impl GaussianKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(RkhsError::InvalidBandwidth(bandwidth));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    fn coefficient(&self) -> f64 {
        -1.0 / (2.0 * self.bandwidth * self.bandwidth)
    }
}

impl Kernel for GaussianKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (self.coefficient() * d2).exp()
    }
}

/// `k(a, b) = aᵀb`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinearKernel;

impl Kernel for LinearKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

/// `G[i][j] = k(aᵢ, bⱼ)` over rows.
pub fn gram<K: Kernel>(kernel: &K, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(RkhsError::DimensionMismatch(format!("feature dims {} and {}", a.cols(), b.cols())));
    }
    Ok(DenseMatrix::from_fn(a.rows(), b.rows(), |i, j| kernel.eval(a.row(i), b.row(j))))
}

/// Symmetric Gram of one set; the lower triangle mirrors the upper exactly.
fn gram_sym<K: Kernel>(kernel: &K, a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let mut g = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(a.row(i), a.row(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Median of pairwise Euclidean distances between distinct rows, or 1.0
/// when that median is zero.
pub fn median_bandwidth(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    if n < 2 {
        return 1.0;
    }
    let d2 = pairwise_sq_dist(a.data(), a.data(), a.cols());
    let mut dists: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| d2[i * n + j].sqrt()).collect();
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

fn mean(m: &DenseMatrix) -> f64 {
    m.data().iter().sum::<f64>() / m.data().len() as f64
}

/// Biased squared MMD `mean(K_AA) − 2·mean(K_AB) + mean(K_BB)`.
pub fn mmd2<K: Kernel>(a: &DenseMatrix, b: &DenseMatrix, kernel: &K) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(RkhsError::TooFewRows { needed: 1, got: 0 });
    }
    let kab = gram(kernel, a, b)?;
    Ok(mean(&gram_sym(kernel, a)) - 2.0 * mean(&kab) + mean(&gram_sym(kernel, b)))
}

/// Paired inputs `X` (`n x dx`) and outputs `Y` (`n x dy`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDataset {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

impl ConditionalDataset {
    pub fn new(x: DenseMatrix, y: DenseMatrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(RkhsError::DimensionMismatch(format!("{} inputs but {} outputs", x.rows(), y.rows())));
        }
        if x.rows() < 2 {
            return Err(RkhsError::TooFewRows { needed: 2, got: x.rows() });
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intermediate quantities of one [`ceod`] evaluation.
#[derive(Debug, Clone)]
pub struct CeodWorkspace {
    pub k_pp: DenseMatrix,
    pub k_qq: DenseMatrix,
    pub k_qp: DenseMatrix,
    pub l_pp: DenseMatrix,
    pub l_qq: DenseMatrix,
    pub l_pq: DenseMatrix,
    pub chol_p: CholeskyFactor,
    pub chol_q: CholeskyFactor,
    /// The three traces, in formula order.
    pub terms: [f64; 3],
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(RkhsError::InvalidLambda(lambda));
    }
    Ok(())
}

fn check_pair_dims(px: usize, py: usize, qx: usize, qy: usize) -> Result<()> {
    if px != qx || py != qy {
        return Err(RkhsError::DimensionMismatch(format!("p has dims ({px}, {py}), q has ({qx}, {qy})")));
    }
    Ok(())
}

/// `Tr(A·B)` without forming the product.
fn trace_of_product(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let (m, n) = (a.rows(), a.cols());
    let mut t = 0.0;
    for i in 0..m {
        for j in 0..n {
            t += a[(i, j)] * b[(j, i)];
        }
    }
    t
}

/// The CEOD trace expression for arbitrary kernels.
pub fn ceod<KX: Kernel, KY: Kernel>(
    p: &ConditionalDataset,
    q: &ConditionalDataset,
    lambda: f64,
    kernel_x: &KX,
    kernel_y: &KY,
) -> Result<(f64, CeodWorkspace)> {
    check_lambda(lambda)?;
    check_pair_dims(p.x.cols(), p.y.cols(), q.x.cols(), q.y.cols())?;
    let (n1, n2) = (p.len() as f64, q.len() as f64);
    let k_pp = gram_sym(kernel_x, &p.x);
    let k_qq = gram_sym(kernel_x, &q.x);
    let k_qp = gram(kernel_x, &q.x, &p.x)?;
    let l_pp = gram_sym(kernel_y, &p.y);
    let l_qq = gram_sym(kernel_y, &q.y);
    let l_pq = gram(kernel_y, &p.y, &q.y)?;
    let mut a_p = k_pp.clone();
    a_p.add_diagonal(lambda * n1);
    let mut a_q = k_qq.clone();
    a_q.add_diagonal(lambda * n2);
    let chol_p = linalg::cholesky(&a_p, 0.0)?;
    let chol_q = linalg::cholesky(&a_q, 0.0)?;
    let t1 = trace_of_product(&linalg::solve_spd(&chol_p, &l_pp)?, &linalg::solve_spd(&chol_p, &k_pp)?);
    let t2 = trace_of_product(&linalg::solve_spd(&chol_q, &l_qq)?, &linalg::solve_spd(&chol_q, &k_qq)?);
    let t3 = trace_of_product(&linalg::solve_spd(&chol_p, &l_pq)?, &linalg::solve_spd(&chol_q, &k_qp)?);
    let value = t1 + t2 - 2.0 * t3;
    Ok((value, CeodWorkspace { k_pp, k_qq, k_qp, l_pp, l_qq, l_pq, chol_p, chol_q, terms: [t1, t2, t3] }))
}

/// Gaussian Gram on the tape: `exp(−sq_dist(a, b)/(2γ²))`.
pub fn gaussian_gram_node(tape: &mut Tape, kernel: &GaussianKernel, a: Var, b: Var) -> Result<Var> {
    let d2 = tape.sq_dist(a, b)?;
    let scaled = tape.scale(d2, kernel.coefficient());
    Ok(tape.exp(scaled))
}

fn regularized(tape: &mut Tape, k: Var, shift: f64) -> Result<Var> {
    let n = tape.shape(k)[0];
    let eye = Tensor::from_matrix(&DenseMatrix::from_diag(&vec![shift; n]));
    let c = tape.constant(eye);
    Ok(tape.add(k, c)?)
}

fn trace_product_node(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let m = tape.matmul(a, b)?;
    Ok(tape.trace(m)?)
}

/// Differentiable CEOD with Gaussian kernels. Any of the four inputs may
/// carry gradients; constant inputs contribute constant subgraphs.
#[allow(clippy::too_many_arguments)]
pub fn ceod_node(
    tape: &mut Tape,
    p_x: Var,
    p_y: Var,
    q_x: Var,
    q_y: Var,
    lambda: f64,
    kernel_x: &GaussianKernel,
    kernel_y: &GaussianKernel,
) -> Result<Var> {
    check_lambda(lambda)?;
    let dims = |t: &Tape, v: Var| -> Result<(usize, usize)> {
        match t.shape(v) {
            [n, d] => Ok((*n, *d)),
            s => Err(RkhsError::DimensionMismatch(format!("expected a matrix, got {s:?}"))),
        }
    };
    let (n1, dpx) = dims(tape, p_x)?;
    let (n1y, dpy) = dims(tape, p_y)?;
    let (n2, dqx) = dims(tape, q_x)?;
    let (n2y, dqy) = dims(tape, q_y)?;
    if n1 != n1y || n2 != n2y {
        return Err(RkhsError::DimensionMismatch(format!("row counts ({n1}, {n1y}) and ({n2}, {n2y})")));
    }
    if n1 < 2 || n2 < 2 {
        return Err(RkhsError::TooFewRows { needed: 2, got: n1.min(n2) });
    }
    check_pair_dims(dpx, dpy, dqx, dqy)?;

    let k_pp = gaussian_gram_node(tape, kernel_x, p_x, p_x)?;
    let k_qq = gaussian_gram_node(tape, kernel_x, q_x, q_x)?;
    let k_qp = gaussian_gram_node(tape, kernel_x, q_x, p_x)?;
    let l_pp = gaussian_gram_node(tape, kernel_y, p_y, p_y)?;
    let l_qq = gaussian_gram_node(tape, kernel_y, q_y, q_y)?;
    let l_pq = gaussian_gram_node(tape, kernel_y, p_y, q_y)?;
    let a_p = regularized(tape, k_pp, lambda * n1 as f64)?;
    let a_q = regularized(tape, k_qq, lambda * n2 as f64)?;

    let s_pl = tape.solve_spd(a_p, l_pp)?;
    let s_pk = tape.solve_spd(a_p, k_pp)?;
    let t1 = trace_product_node(tape, s_pl, s_pk)?;
    let s_ql = tape.solve_spd(a_q, l_qq)?;
    let s_qk = tape.solve_spd(a_q, k_qq)?;
    let t2 = trace_product_node(tape, s_ql, s_qk)?;
    let s_cross_l = tape.solve_spd(a_p, l_pq)?;
    let s_cross_k = tape.solve_spd(a_q, k_qp)?;
    let t3 = trace_product_node(tape, s_cross_l, s_cross_k)?;
    let diag = tape.add(t1, t2)?;
    let cross = tape.scale(t3, 2.0);
    Ok(tape.sub(diag, cross)?)
}
