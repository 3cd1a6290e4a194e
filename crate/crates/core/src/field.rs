//! Gaussian random fields from a truncated Karhunen-Loève expansion of the
//! squared-exponential covariance.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, DenseMatrix, LinalgError};

/// Default fraction of covariance energy kept by the truncation.
pub const DEFAULT_ENERGY_FRACTION: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid covariance parameters: {0}")]
    InvalidParams(String),
    #[error("unknown field preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, FieldError>;

/// xoshiro256** stream seeded through SplitMix64.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { inner: Xoshiro256StarStar::seed_from_u64(seed), spare_normal: None }
    }

    /// Independent stream number `index` for a base seed.
    pub fn derive(seed: u64, index: u64) -> Self {
        Self::new(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via the Box–Muller transform.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n` in random order (`k ≤ n`).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<usize> = (0..n).collect();
        let (head, _) = all.partial_shuffle(&mut self.inner, k.min(n));
        head.to_vec()
    }
}

/// Squared-exponential covariance `σ²·exp(−Δx²/(2ℓx²) − Δy²/(2ℓy²))`.
///
/// A missing `ly` makes the kernel one-dimensional in `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeCovarianceParams {
    pub lx: f64,
    pub ly: Option<f64>,
    pub variance: f64,
}

impl SeCovarianceParams {
    pub fn new_2d(lx: f64, ly: f64, variance: f64) -> Result<Self> {
        let p = Self { lx, ly: Some(ly), variance };
        p.validate()?;
        Ok(p)
    }

    pub fn new_1d(lx: f64, variance: f64) -> Result<Self> {
        let p = Self { lx, ly: None, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.lx) || !self.ly.is_none_or(ok) || !ok(self.variance) {
            return Err(FieldError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    /// Named parameter sets. The Brusselator sets come in source, OOD₁ and
    /// OOD₂ flavours; target tasks share the source set.
    pub fn preset(name: &str) -> Result<Self> {
        let p = match name {
            "brusselator-source" | "brusselator-target" | "darcy" => Self { lx: 0.30, ly: Some(0.40), variance: 0.15 },
            "brusselator-ood1" => Self { lx: 0.11, ly: Some(0.15), variance: 0.15 },
            "brusselator-ood2" => Self { lx: 0.35, ly: Some(0.45), variance: 0.15 },
            "burgers" => Self { lx: 0.35, ly: None, variance: 0.05 },
            other => return Err(FieldError::UnknownPreset(other.to_string())),
        };
        Ok(p)
    }

    pub fn eval(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let dx = a[0] - b[0];
        let mut e = dx * dx / (2.0 * self.lx * self.lx);
        if let Some(ly) = self.ly {
            let dy = a[1] - b[1];
            e += dy * dy / (2.0 * ly * ly);
        }
        self.variance * (-e).exp()
    }
}

/// Dense covariance matrix over `points` (for 1-D kernels only `x` is read).
pub fn se_covariance(points: &[[f64; 2]], params: &SeCovarianceParams) -> Result<DenseMatrix> {
    params.validate()?;
    if points.is_empty() || points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(FieldError::InvalidParams("points must be non-empty and finite".into()));
    }
    let n = points.len();
    let mut cov = DenseMatrix::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = params.variance;
        for j in 0..i {
            let v = params.eval(points[i], points[j]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Truncated spectral basis: `field = modes · ξ` with `ξ ~ N(0, I)`.
#[derive(Debug, Clone)]
pub struct KleBasis {
    /// `points x retained`, column `i` is `√λᵢ·vᵢ`.
    pub modes: DenseMatrix,
    /// All eigenvalues (clamped at zero), descending.
    pub eigenvalues: Vec<f64>,
    pub retained: usize,
    pub energy_fraction: f64,
}

impl KleBasis {
    pub fn num_points(&self) -> usize {
        self.modes.rows()
    }

    /// Share of total variance carried by the retained modes.
    pub fn captured_energy(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        self.eigenvalues[..self.retained].iter().sum::<f64>() / total
    }

    /// `modes · modesᵀ`, the covariance implied by the truncation.
    pub fn implied_covariance(&self) -> DenseMatrix {
        self.modes.matmul(&self.modes.transpose()).expect("conforming")
    }

    /// Field values for explicit coefficients `xi` (length `retained`).
    pub fn synthesize(&self, xi: &[f64]) -> Vec<f64> {
        assert_eq!(xi.len(), self.retained, "coefficient count");
        let mut out = vec![0.0; self.num_points()];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.modes.row(i).iter().zip(xi).map(|(m, z)| m * z).sum();
        }
        out
    }
}

fn retained_count(values: &[f64], fraction: f64) -> usize {
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let target = fraction * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if acc >= target {
            return i + 1;
        }
    }
    values.len()
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FieldError::InvalidParams(format!("energy fraction {fraction} not in (0, 1]")));
    }
    Ok(())
}

/// Eigendecomposition-based truncation of a covariance matrix.
pub fn kle_decompose(cov: &DenseMatrix, energy_fraction: f64) -> Result<KleBasis> {
    check_fraction(energy_fraction)?;
    let eig = linalg::sym_eig(cov)?;
    let values: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let retained = retained_count(&values, energy_fraction);
    let n = cov.rows();
    let modes = DenseMatrix::from_fn(n, retained, |i, j| values[j].sqrt() * eig.vectors[(i, j)]);
    Ok(KleBasis { modes, eigenvalues: values, retained, energy_fraction })
}

/// Tensor-grid fast path: the squared-exponential kernel factorizes as
/// `C = C_y ⊗ C_x`, so its spectrum is the product of the two 1-D spectra.
///
/// Points are ordered row by row (`index = iy·nx + ix`), matching
/// [`grid_points`].
pub fn kle_decompose_grid(xs: &[f64], ys: &[f64], params: &SeCovarianceParams, energy_fraction: f64) -> Result<KleBasis> {
    check_fraction(energy_fraction)?;
    params.validate()?;
    let ly = params.ly.ok_or_else(|| FieldError::InvalidParams("grid expansion needs ly".into()))?;
    let px: Vec<[f64; 2]> = xs.iter().map(|&x| [x, 0.0]).collect();
    let py: Vec<[f64; 2]> = ys.iter().map(|&y| [y, 0.0]).collect();
    let ex = linalg::sym_eig(&se_covariance(&px, &SeCovarianceParams { lx: params.lx, ly: None, variance: 1.0 })?)?;
    let ey = linalg::sym_eig(&se_covariance(&py, &SeCovarianceParams { lx: ly, ly: None, variance: 1.0 })?)?;

    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(xs.len() * ys.len());
    for (iy, &vy) in ey.values.iter().enumerate() {
        for (ix, &vx) in ex.values.iter().enumerate() {
            pairs.push((params.variance * vx.max(0.0) * vy.max(0.0), ix, iy));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let retained = retained_count(&values, energy_fraction);
    let (nx, ny) = (xs.len(), ys.len());
    let mut modes = DenseMatrix::zeros(nx * ny, retained);
    for (col, &(lambda, ix, iy)) in pairs[..retained].iter().enumerate() {
        let s = lambda.sqrt();
        for jy in 0..ny {
            let vy = ey.vectors[(jy, iy)];
            for jx in 0..nx {
                modes[(jy * nx + jx, col)] = s * vy * ex.vectors[(jx, ix)];
            }
        }
    }
    Ok(KleBasis { modes, eigenvalues: values, retained, energy_fraction })
}

/// One realization `modes · ξ`.
pub fn sample_field(basis: &KleBasis, rng: &mut RngStream) -> Vec<f64> {
    let xi: Vec<f64> = (0..basis.retained).map(|_| rng.standard_normal()).collect();
    basis.synthesize(&xi)
}

/// `n` equispaced coordinates covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Row-major tensor-grid points, `index = iy·nx + ix`.
pub fn grid_points(xs: &[f64], ys: &[f64]) -> Vec<[f64; 2]> {
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect()
}
