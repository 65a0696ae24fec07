//! Small dense linear algebra: a row-major matrix and the Cholesky routines the
//! Gaussian process needs. Sizes here are tens of rows, so nothing is blocked.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: Matrix,
}

/// A non-positive pivot was met at `index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub index: usize,
}

impl Cholesky {
    /// Strict factorization: every pivot must be positive.
    pub fn new(a: &Matrix) -> Result<Self, NotPositiveDefinite> {
        let n = a.rows();
        debug_assert_eq!(n, a.cols());
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(NotPositiveDefinite { index: j });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    /// Factorization for positive *semi*-definite matrices, as produced by
    /// posterior covariances. Pivots at or below `tol · max(diag)` are treated
    /// as exact zeros and their column is dropped; a pivot below `-tol · max(diag)`
    /// (beyond rounding) is reported as a failure.
    pub fn semidefinite(a: &Matrix, tol: f64) -> Result<Self, NotPositiveDefinite> {
        let n = a.rows();
        debug_assert_eq!(n, a.cols());
        let scale = a.diagonal().into_iter().fold(0.0_f64, f64::max);
        let cutoff = tol * scale.max(f64::MIN_POSITIVE);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !d.is_finite() || d < -cutoff {
                return Err(NotPositiveDefinite { index: j });
            }
            if d <= cutoff {
                continue;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let l = &self.lower;
        for i in 0..b.len() {
            let mut s = b[i];
            let row = l.row(i);
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let l = &self.lower;
        for i in (0..b.len()).rev() {
            let mut s = b[i];
            for k in (i + 1)..b.len() {
                s -= l[(k, i)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `log |A| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Explicit inverse of `A`; only used by the likelihood gradient.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_lower_in_place(&mut col);
            self.solve_upper_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Cholesky of `a + jitter·I`, starting at `start` and multiplying the jitter by
/// ten until `max` is exceeded. Returns the factor and the jitter that worked.
pub fn cholesky_with_jitter(
    a: &Matrix,
    start: f64,
    max: f64,
) -> Result<(Cholesky, f64), NotPositiveDefinite> {
    let mut jitter = start;
    let mut last = NotPositiveDefinite { index: 0 };
    while jitter <= max * (1.0 + 1e-12) {
        let mut shifted = a.clone();
        shifted.add_diagonal(jitter);
        match Cholesky::new(&shifted) {
            Ok(c) => return Ok((c, jitter)),
            Err(e) => last = e,
        }
        jitter *= 10.0;
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spd3() -> Matrix {
        Matrix::from_fn(3, 3, |i, j| match (i, j) {
            (0, 0) => 4.0,
            (1, 1) => 5.0,
            (2, 2) => 6.0,
            (0, 1) | (1, 0) => 2.0,
            (1, 2) | (2, 1) => 1.0,
            _ => 0.5,
        })
    }

    #[test]
    fn factor_reconstructs() {
        let a = spd3();
        let c = Cholesky::new(&a).unwrap();
        let l = c.lower();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[(i, k)] * l[(j, k)]).sum();
                assert_abs_diff_eq!(v, a[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = spd3();
        let c = Cholesky::new(&a).unwrap();
        let x = c.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|k| a[(i, k)] * x[k]).sum();
            assert_abs_diff_eq!(ax, [1.0, 2.0, 3.0][i], epsilon = 1e-12);
        }
        let inv = c.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[(i, k)] * inv[(k, j)]).sum();
                assert_abs_diff_eq!(v, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn log_det_matches_product_of_pivots() {
        let a = Matrix::from_fn(2, 2, |i, j| if i == j { 3.0 } else { 1.0 });
        let c = Cholesky::new(&a).unwrap();
        assert_abs_diff_eq!(c.log_det(), 8.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn singular_matrix_needs_jitter() {
        let a = Matrix::from_fn(2, 2, |_, _| 1.0);
        assert!(Cholesky::new(&a).is_err());
        let (_, jitter) = cholesky_with_jitter(&a, 1e-8, 1e-4).unwrap();
        assert!((1e-8..=1e-4).contains(&jitter));
        let neg = Matrix::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(cholesky_with_jitter(&neg, 1e-8, 1e-4).is_err());
    }

    #[test]
    fn semidefinite_accepts_zero_and_rank_one() {
        let zero = Matrix::zeros(3, 3);
        let c = Cholesky::semidefinite(&zero, 1e-12).unwrap();
        assert!(c.lower().as_slice().iter().all(|&v| v == 0.0));

        let v = [1.0, 2.0, -1.0];
        let rank1 = Matrix::from_fn(3, 3, |i, j| v[i] * v[j]);
        let c = Cholesky::semidefinite(&rank1, 1e-12).unwrap();
        let l = c.lower();
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| l[(i, k)] * l[(j, k)]).sum();
                assert_abs_diff_eq!(r, rank1[(i, j)], epsilon = 1e-12);
            }
        }
    }
}
