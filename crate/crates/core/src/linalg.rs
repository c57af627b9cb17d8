//! Dense matrix types and the symmetric eigensolver used by spectral oracles.
//!
//! [`FeatureMatrix`] is the workhorse container for per-vertex feature maps:
//! row-major `f32`, one row per vertex, one column per channel. The `f64`
//! [`DenseMatrix`] plus the Jacobi eigensolver exist for verification paths
//! (spectral oracles, spectrum-bound tests) and are never on the training
//! fast path.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::{Error, Result};

/// Dense row-major `f32` matrix holding graph signals / feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Wrap an existing row-major buffer. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn fill(&mut self, v: f32) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// Largest absolute entrywise difference; matrices must share a shape.
    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    /// Check shape and report a labeled error on mismatch.
    pub fn expect_rows(&self, context: &'static str, rows: usize) -> Result<()> {
        if self.rows != rows {
            return Err(Error::ShapeMismatch { context, expected: rows, actual: self.rows });
        }
        Ok(())
    }

    pub fn expect_cols(&self, context: &'static str, cols: usize) -> Result<()> {
        if self.cols != cols {
            return Err(Error::ShapeMismatch { context, expected: cols, actual: self.cols });
        }
        Ok(())
    }
}

/// `out += a * b` where `a` is `n x m`, `b` is a row-major `m x p` slice.
///
/// The inner loop runs over contiguous output channels so it vectorizes.
pub fn matmul_acc(out: &mut FeatureMatrix, a: &FeatureMatrix, b: &[f32], p: usize) {
    let m = a.cols();
    assert_eq!(b.len(), m * p);
    assert_eq!(out.rows(), a.rows());
    assert_eq!(out.cols(), p);
    for (out_row, a_row) in out.data.chunks_exact_mut(p).zip(a.data.chunks_exact(m)) {
        for (&a_val, b_row) in a_row.iter().zip(b.chunks_exact(p)) {
            if a_val != 0.0 {
                for (o, &b_val) in out_row.iter_mut().zip(b_row) {
                    *o += a_val * b_val;
                }
            }
        }
    }
}

/// `out += a * b^T` where `a` is `n x p`, `b` is a row-major `m x p` slice
/// interpreted transposed; `out` is `n x m`.
pub fn matmul_transposed_acc(out: &mut FeatureMatrix, a: &FeatureMatrix, b: &[f32], m: usize) {
    let p = a.cols();
    assert_eq!(b.len(), m * p);
    assert_eq!(out.rows(), a.rows());
    assert_eq!(out.cols(), m);
    for (out_row, a_row) in out.data.chunks_exact_mut(m).zip(a.data.chunks_exact(p)) {
        for (o, b_row) in out_row.iter_mut().zip(b.chunks_exact(p)) {
            let mut acc = 0.0f32;
            for (&a_val, &b_val) in a_row.iter().zip(b_row) {
                acc += a_val * b_val;
            }
            *o += acc;
        }
    }
}

/// Dense row-major `f64` matrix for oracles and small verification problems.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// `self * other`, both dense.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a != 0.0 {
                    let orow = other.row(k).to_vec();
                    let out_row =
                        &mut out.data[i * out.cols..(i + 1) * out.cols];
                    for (o, &b) in out_row.iter_mut().zip(&orow) {
                        *o += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Eigendecomposition of a symmetric matrix.
pub struct SymEigen {
    /// Eigenvalues sorted ascending.
    pub values: Vec<f64>,
    /// Matching eigenvectors as columns.
    pub vectors: DenseMatrix,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Robust and dependency-free; O(n^3) per sweep, entirely adequate for the
/// verification sizes used here (n <= 500).
pub fn sym_eigen(a: &DenseMatrix) -> Result<SymEigen> {
    if a.rows() != a.cols() || !a.is_symmetric(1e-9) {
        return Err(Error::NotSymmetric);
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);

    let off_norm = |m: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m.get(i, j) * m.get(i, j);
            }
        }
        s.sqrt()
    };
    let total: f64 = (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j) * m.get(i, j)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let tol = 1e-14 * total.max(1e-300);

    for _sweep in 0..100 {
        if off_norm(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).partial_cmp(&m.get(j, j)).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_acc_matches_naive() {
        let a = FeatureMatrix::from_fn(3, 2, |r, c| (r * 2 + c) as f32);
        let b = [1.0f32, 2.0, 3.0, -1.0, 0.5, 0.0]; // 2 x 3
        let mut out = FeatureMatrix::zeros(3, 3);
        matmul_acc(&mut out, &a, &b, 3);
        for r in 0..3 {
            for c in 0..3 {
                let want: f32 = (0..2).map(|k| a.get(r, k) * b[k * 3 + c]).sum();
                assert!((out.get(r, c) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_transposed_acc_matches_naive() {
        let a = FeatureMatrix::from_fn(4, 3, |r, c| (r as f32) - (c as f32) * 0.5);
        let b = [0.5f32, 1.0, -2.0, 2.0, 0.0, 1.0]; // 2 x 3, used transposed
        let mut out = FeatureMatrix::zeros(4, 2);
        matmul_transposed_acc(&mut out, &a, &b, 2);
        for r in 0..4 {
            for m in 0..2 {
                let want: f32 = (0..3).map(|p| a.get(r, p) * b[m * 3 + p]).sum();
                assert!((out.get(r, m) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn jacobi_on_known_2x2() {
        // [[1,-1],[-1,1]] has eigenvalues {0, 2}.
        let mut a = DenseMatrix::zeros(2, 2);
        a.set(0, 0, 1.0);
        a.set(0, 1, -1.0);
        a.set(1, 0, -1.0);
        a.set(1, 1, 1.0);
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] - 0.0).abs() < 1e-12);
        assert!((e.values[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        // A = V diag(w) V^T must reproduce the input.
        let n = 12;
        let mut a = DenseMatrix::zeros(n, n);
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (u32::MAX as f64) - 0.5
        };
        for i in 0..n {
            for j in i..n {
                let v = next();
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        let e = sym_eigen(&a).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += e.vectors.get(i, k) * e.values[k] * e.vectors.get(j, k);
                }
                assert!((s - a.get(i, j)).abs() < 1e-9, "mismatch at ({i},{j})");
            }
        }
        // Eigenvectors orthonormal.
        for c1 in 0..n {
            for c2 in 0..n {
                let dot: f64 =
                    (0..n).map(|r| e.vectors.get(r, c1) * e.vectors.get(r, c2)).sum();
                let want = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobi_rejects_nonsymmetric() {
        let mut a = DenseMatrix::zeros(2, 2);
        a.set(0, 1, 1.0);
        assert!(sym_eigen(&a).is_err());
    }
}
