//! Sparse symmetric matrices in CSR form.
//!
//! Both the kNN adjacency and the (rescaled) Laplacian are stored here. The
//! matrix keeps every nonzero of both triangles so that row-wise products
//! need no index gymnastics; symmetry is a construction invariant that
//! [`SparseSym::is_symmetric`] can re-verify in tests.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{DenseMatrix, FeatureMatrix};

/// Sparse symmetric square matrix, CSR with explicit storage of both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseSym {
    /// Build from per-row `(column, value)` lists. Rows need not be sorted;
    /// they are sorted here so iteration order is canonical.
    pub fn from_rows(n: usize, mut rows: Vec<Vec<(u32, f64)>>) -> Self {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows.iter_mut() {
            row.sort_unstable_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                debug_assert!((c as usize) < n);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(columns, values)` of one row.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// Entrywise symmetry check (exact comparison).
    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if self.entry(j as usize, i) != v {
                    return false;
                }
            }
        }
        true
    }

    /// Iterate all stored entries as `(row, col, value)`.
    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j as usize, v))
        })
    }

    /// Map stored values, keeping the sparsity pattern.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `out = self * x` with `f64` accumulation, for power iteration.
    pub fn matvec_f64(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0f64;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j as usize];
            }
            out[i] = acc;
        }
    }

    /// `out = self * x` applied to every feature column at once.
    pub fn mul_features_into(&self, x: &FeatureMatrix, out: &mut FeatureMatrix) {
        assert_eq!(x.rows(), self.n);
        assert_eq!(out.rows(), self.n);
        assert_eq!(out.cols(), x.cols());
        let c = x.cols();
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let out_row = out.row_mut(i);
            out_row.iter_mut().for_each(|v| *v = 0.0);
            for (&j, &w) in cols.iter().zip(vals) {
                let w = w as f32;
                let x_row = x.row(j as usize);
                debug_assert_eq!(x_row.len(), c);
                for (o, &xv) in out_row.iter_mut().zip(x_row) {
                    *o += w * xv;
                }
            }
        }
    }

    pub fn mul_features(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(self.n, x.cols());
        self.mul_features_into(x, &mut out);
        out
    }

    /// Dense `f64` copy for oracles.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter_entries() {
            d.set(i, j, v);
        }
        d
    }

    /// Row sums (degrees when the matrix is an adjacency), `f64` accumulation.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (_, vals) = self.row(i);
                vals.iter().sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseSym {
        // 0 -- 1 (w 0.5), 1 -- 2 (w 2.0)
        SparseSym::from_rows(
            3,
            vec![
                vec![(1, 0.5)],
                vec![(0, 0.5), (2, 2.0)],
                vec![(1, 2.0)],
            ],
        )
    }

    #[test]
    fn entry_lookup_and_symmetry() {
        let m = sample();
        assert_eq!(m.entry(0, 1), 0.5);
        assert_eq!(m.entry(1, 0), 0.5);
        assert_eq!(m.entry(0, 2), 0.0);
        assert!(m.is_symmetric());
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn matvec_matches_dense() {
        let m = sample();
        let d = m.to_dense();
        let x = [1.0, -2.0, 3.0];
        let mut out = [0.0; 3];
        m.matvec_f64(&x, &mut out);
        let want = d.matvec(&x);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mul_features_matches_per_column_matvec() {
        let m = sample();
        let x = FeatureMatrix::from_fn(3, 2, |r, c| (r + 1) as f32 * if c == 0 { 1.0 } else { -0.5 });
        let y = m.mul_features(&x);
        for c in 0..2 {
            let xcol: Vec<f64> = (0..3).map(|r| x.get(r, c) as f64).collect();
            let mut want = [0.0; 3];
            m.matvec_f64(&xcol, &mut want);
            for r in 0..3 {
                assert!((y.get(r, c) as f64 - want[r]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn row_sums_are_degrees() {
        let m = sample();
        let d = m.row_sums();
        assert!((d[0] - 0.5).abs() < 1e-12);
        assert!((d[1] - 2.5).abs() < 1e-12);
        assert!((d[2] - 2.0).abs() < 1e-12);
    }
}
