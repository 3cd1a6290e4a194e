//! Strided GEMM shim over `matrixmultiply`.

/// A borrowed matrix operand with explicit row and column strides.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> View<'a> {
    /// Row-major operand with `cols` columns.
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: cols as isize, col_stride: 1 }
    }

    /// The transpose of a row-major `rows x cols` matrix, read in place.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols as isize }
    }
}

/// `C = alpha·A·B + beta·C` where `A` is `m x k`, `B` is `k x n` and `C` is
/// row-major `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let max_index = |v: &View<'_>, r: usize, cc: usize| (r - 1) as isize * v.row_stride + (cc - 1) as isize * v.col_stride;
    assert!((max_index(&a, m, k) as usize) < a.data.len(), "gemm lhs out of bounds");
    assert!((max_index(&b, k, n) as usize) < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: the bounds of both operands and the output were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
