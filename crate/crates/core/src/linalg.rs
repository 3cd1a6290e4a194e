//! Dense symmetric linear algebra: Cholesky factorization, SPD solves and a
//! cyclic Jacobi eigensolver.
//!
//! Everything here works on row-major `f64` matrices and is free of shared
//! state, so all functions may be called concurrently.

use std::fmt;

use thiserror::Error;

/// Sweep budget for the cyclic Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Jacobi eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: format!("{} entries", rows * cols),
                got: format!("{} entries", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: format!("{} rows", self.cols),
                got: format!("{} rows", other.rows),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        crate::kernels::gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            crate::kernels::View::row_major(&self.data, self.cols),
            crate::kernels::View::row_major(&other.data, other.cols),
            0.0,
            &mut out.data,
        );
        Ok(out)
    }

    pub fn add_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += value;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `max |a_ij - a_ji|`; only meaningful for square matrices.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Element-wise difference `self - other`.
    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseMatrix { rows: self.rows, cols: self.cols, data })
    }

    fn check_same_shape(&self, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = A + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DenseMatrix,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    pub fn size(&self) -> usize {
        self.lower.rows
    }

    /// `L·Lᵀ`, mostly useful for verification.
    pub fn reconstruct(&self) -> DenseMatrix {
        let lt = self.lower.transpose();
        self.lower.matmul(&lt).expect("square factor")
    }

    /// `log det(L·Lᵀ)`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.size()).map(|i| self.lower[(i, i)].ln()).sum::<f64>()
    }
}

fn ensure_symmetric(a: &DenseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows, cols: a.cols });
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let asym = a.max_asymmetry();
    if asym > 1e-10 * scale {
        return Err(LinalgError::NotSymmetric(asym));
    }
    Ok(())
}

/// Cholesky factorization of `a + jitter·I`.
///
/// Only the lower triangle of `a` is read after the symmetry check.
pub fn cholesky(a: &DenseMatrix, jitter: f64) -> Result<CholeskyFactor> {
    ensure_symmetric(a)?;
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)] + jitter;
        {
            let lj = l.row(j);
            diag -= lj[..j].iter().map(|v| v * v).sum::<f64>();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { row: j, pivot: diag });
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let (ri, rj) = (i * n, j * n);
            let dot: f64 = l.data[ri..ri + j].iter().zip(&l.data[rj..rj + j]).map(|(x, y)| x * y).sum();
            l.data[ri + j] = (a[(i, j)] - dot) / d;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Solves `(L·Lᵀ)·X = B` for every column of `b`.
pub fn solve_spd(factor: &CholeskyFactor, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = factor.size();
    if b.rows != n {
        return Err(LinalgError::DimensionMismatch {
            expected: format!("{n} rows"),
            got: format!("{} rows", b.rows),
        });
    }
    let l = &factor.lower;
    let m = b.cols;
    let mut x = b.clone();
    // Forward substitution L·Z = B, all right-hand sides at once.
    for i in 0..n {
        let lii = l[(i, i)];
        for k in 0..i {
            let lik = l[(i, k)];
            if lik != 0.0 {
                let (head, tail) = x.data.split_at_mut(i * m);
                let src = &head[k * m..(k + 1) * m];
                for (dst, s) in tail[..m].iter_mut().zip(src) {
                    *dst -= lik * s;
                }
            }
        }
        for v in &mut x.data[i * m..(i + 1) * m] {
            *v /= lii;
        }
    }
    // Back substitution Lᵀ·X = Z.
    for i in (0..n).rev() {
        let lii = l[(i, i)];
        for k in (i + 1)..n {
            let lki = l[(k, i)];
            if lki != 0.0 {
                let (head, tail) = x.data.split_at_mut(k * m);
                let src = &tail[..m];
                for (dst, s) in head[i * m..(i + 1) * m].iter_mut().zip(src) {
                    *dst -= lki * s;
                }
            }
        }
        for v in &mut x.data[i * m..(i + 1) * m] {
            *v /= lii;
        }
    }
    Ok(x)
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: DenseMatrix,
}

impl EigDecomposition {
    /// `V·diag(λ)·Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.vectors.rows;
        let k = self.values.len();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            for j in 0..k {
                scaled[(i, j)] *= self.values[j];
            }
        }
        scaled.matmul(&self.vectors.transpose()).expect("conforming")
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Converges when the off-diagonal Frobenius norm falls below
/// `1e-12·‖A‖_F`, or fails with [`LinalgError::NoConvergence`] after
/// [`JACOBI_MAX_SWEEPS`] sweeps.
pub fn sym_eig(a: &DenseMatrix) -> Result<EigDecomposition> {
    ensure_symmetric(a)?;
    let n = a.rows;
    let mut m = a.clone();
    // Symmetrize exactly so rotations see one consistent matrix.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let norm = m.frobenius_norm();
    let tol = 1e-12 * norm;

    let off_norm = |m: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = n <= 1 || norm == 0.0 || off_norm(&m) <= tol;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::NoConvergence(JACOBI_MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s, t, apq);
            }
        }
        converged = off_norm(&m) <= tol;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigDecomposition { values, vectors })
}

#[allow(clippy::too_many_arguments)]
fn rotate(m: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64, t: f64, apq: f64) {
    let n = m.rows;
    m[(p, p)] -= t * apq;
    m[(q, q)] += t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        let new_p = c * akp - s * akq;
        let new_q = s * akp + c * akq;
        m[(k, p)] = new_p;
        m[(p, k)] = new_p;
        m[(k, q)] = new_q;
        m[(q, k)] = new_q;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_frob(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut s = seed;
        let m = DenseMatrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        });
        let mut a = m.transpose().matmul(&m).unwrap();
        a.add_diagonal(1.0);
        a
    }

    #[test]
    fn cholesky_identity() {
        let f = cholesky(&DenseMatrix::identity(3), 0.0).unwrap();
        assert_eq!(f.lower(), &DenseMatrix::identity(3));
    }

    #[test]
    fn cholesky_reconstructs_2x2() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let f = cholesky(&a, 0.0).unwrap();
        assert!(rel_frob(&f.reconstruct(), &a) < 1e-10);
        assert_eq!(f.lower()[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(cholesky(&a, 0.0), Err(LinalgError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn cholesky_jitter_is_added() {
        let a = DenseMatrix::zeros(2, 2);
        let f = cholesky(&a, 0.25).unwrap();
        assert!((f.lower()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![1.0, 3.0]]);
        assert!(matches!(cholesky(&a, 0.0), Err(LinalgError::NotSymmetric(_))));
    }

    #[test]
    fn solve_identity_and_scalar() {
        let f = cholesky(&DenseMatrix::identity(3), 0.0).unwrap();
        let b = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0], vec![0.5, 0.0]]);
        assert_eq!(solve_spd(&f, &b).unwrap(), b);

        let f = cholesky(&DenseMatrix::from_diag(&[2.0]), 0.0).unwrap();
        let x = solve_spd(&f, &DenseMatrix::from_rows(&[vec![6.0]])).unwrap();
        assert!((x[(0, 0)] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn solve_known_solution() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        // b = A·[1, 1]ᵀ
        let b = DenseMatrix::from_rows(&[vec![6.0], vec![5.0]]);
        let x = solve_spd(&cholesky(&a, 0.0).unwrap(), &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12 && (x[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solve_dimension_mismatch() {
        let f = cholesky(&DenseMatrix::identity(3), 0.0).unwrap();
        let b = DenseMatrix::zeros(2, 1);
        assert!(matches!(solve_spd(&f, &b), Err(LinalgError::DimensionMismatch { .. })));
    }

    #[test]
    fn eig_diagonal() {
        let e = sym_eig(&DenseMatrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        // axis-aligned: column 0 is e_0, column 1 is e_2, column 2 is e_1
        assert_eq!(e.vectors[(0, 0)].abs(), 1.0);
        assert_eq!(e.vectors[(2, 1)].abs(), 1.0);
        assert_eq!(e.vectors[(1, 2)].abs(), 1.0);
    }

    #[test]
    fn eig_2x2_by_hand() {
        let e = sym_eig(&DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]])).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vectors.column(0);
        let v1 = e.vectors.column(1);
        assert!((v0[0].abs() - h).abs() < 1e-12 && (v0[0] - v0[1]).abs() < 1e-12);
        assert!((v1[0].abs() - h).abs() < 1e-12 && (v1[0] + v1[1]).abs() < 1e-12);
    }

    #[test]
    fn eig_identity() {
        let e = sym_eig(&DenseMatrix::identity(5)).unwrap();
        assert!(e.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn eig_reconstruction_256() {
        let n = 256;
        let mut s = 7u64;
        let m = DenseMatrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        let a = DenseMatrix::from_fn(n, n, |i, j| m[(i, j)] + m[(j, i)]);
        let e = sym_eig(&a).unwrap();
        assert!(rel_frob(&e.reconstruct(), &a) < 1e-8);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let sum: f64 = e.values.iter().sum();
        assert!((sum - a.trace()).abs() <= 1e-9 * a.trace().abs().max(1.0));
        for j in 0..n {
            let norm: f64 = e.vectors.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn spd_round_trip(n in 1usize..24, seed in any::<u64>()) {
            let a = random_spd(n, seed);
            let f = cholesky(&a, 0.0).unwrap();
            prop_assert!(rel_frob(&f.reconstruct(), &a) < 1e-10);
            let b = DenseMatrix::from_fn(n, 2, |i, j| (i as f64 + 1.0) * if j == 0 { 1.0 } else { -0.5 });
            let x = solve_spd(&f, &b).unwrap();
            let r = a.matmul(&x).unwrap().sub(&b).unwrap();
            prop_assert!(r.frobenius_norm() / b.frobenius_norm() < 1e-9);
        }

        #[test]
        fn eig_trace_and_reconstruction(n in 1usize..20, seed in any::<u64>()) {
            let a = random_spd(n, seed);
            let e = sym_eig(&a).unwrap();
            prop_assert!(rel_frob(&e.reconstruct(), &a) < 1e-8);
            let sum: f64 = e.values.iter().sum();
            prop_assert!((sum - a.trace()).abs() <= 1e-9 * a.trace().abs());
        }
    }
}
