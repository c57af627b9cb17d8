//! Chebyshev polynomial graph filtering.
//!
//! A filter bank of order `K` maps `C_in` graph signals to `C_out` outputs:
//!
//! ```text
//! Y[:, o] = sum_k sum_c theta[k][c][o] * T_k(Lt) X[:, c]      (+ bias[o])
//! ```
//!
//! with the three-term recursion `T_0 = X`, `T_1 = Lt X`,
//! `T_k = 2 Lt T_{k-1} - T_{k-2}`. No eigendecomposition is ever performed on
//! the fast path; because `Lt` has spectrum in `[-1, 1]` the recursion stays
//! bounded and is computed in `f32` (the `dTheta` inner products accumulate
//! in `f64`). The filter is exactly K-hop localized: output row `i` depends
//! only on input rows within `K` graph hops of `i`.
//!
//! [`cheb_spectral_oracle`] evaluates the same map through a dense `f64`
//! eigendecomposition and exists purely to cross-check the recursion in
//! tests.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::RescaledLaplacian;
use crate::linalg::{matmul_acc, matmul_transposed_acc, sym_eigen, DenseMatrix, FeatureMatrix};
use crate::{Error, Result};

/// Learnable Chebyshev coefficients indexed `(k, c_in, c_out)`, with an
/// optional per-output-channel bias applied after the polynomial sum.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebFilterBank {
    order: usize,
    c_in: usize,
    c_out: usize,
    /// Row-major `(order + 1) x c_in x c_out`.
    pub theta: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl ChebFilterBank {
    pub fn zeros(order: usize, c_in: usize, c_out: usize, with_bias: bool) -> Self {
        Self {
            order,
            c_in,
            c_out,
            theta: vec![0.0; (order + 1) * c_in * c_out],
            bias: if with_bias { Some(vec![0.0; c_out]) } else { None },
        }
    }

    pub fn from_theta(
        order: usize,
        c_in: usize,
        c_out: usize,
        theta: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Self {
        assert_eq!(theta.len(), (order + 1) * c_in * c_out);
        if let Some(b) = &bias {
            assert_eq!(b.len(), c_out);
        }
        Self { order, c_in, c_out, theta, bias }
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn input_channels(&self) -> usize {
        self.c_in
    }

    #[inline]
    pub fn output_channels(&self) -> usize {
        self.c_out
    }

    /// The `c_in x c_out` coefficient block of one polynomial degree.
    #[inline]
    pub fn theta_block(&self, k: usize) -> &[f32] {
        let stride = self.c_in * self.c_out;
        &self.theta[k * stride..(k + 1) * stride]
    }

    #[inline]
    pub fn coeff(&self, k: usize, c: usize, o: usize) -> f32 {
        self.theta[(k * self.c_in + c) * self.c_out + o]
    }

    pub fn set_coeff(&mut self, k: usize, c: usize, o: usize, v: f32) {
        self.theta[(k * self.c_in + c) * self.c_out + o] = v;
    }

    fn check_input(&self, lt: &RescaledLaplacian, x: &FeatureMatrix) -> Result<()> {
        x.expect_rows("cheb filter input rows", lt.dim())?;
        x.expect_cols("cheb filter input channels", self.c_in)
    }
}

/// Stored Chebyshev basis `T_k(Lt) X` for `k = 0..=K`, reused by the
/// backward pass.
#[derive(Clone, Debug)]
pub struct ChebCache {
    pub t_bars: Vec<FeatureMatrix>,
}

/// Gradients of a filter bank application.
#[derive(Clone, Debug)]
pub struct ChebGrads {
    /// Same layout as [`ChebFilterBank::theta`].
    pub d_theta: Vec<f32>,
    pub d_bias: Option<Vec<f32>>,
}

fn chebyshev_basis(lt: &RescaledLaplacian, x: &FeatureMatrix, order: usize) -> Vec<FeatureMatrix> {
    let mut t_bars = Vec::with_capacity(order + 1);
    t_bars.push(x.clone());
    if order >= 1 {
        t_bars.push(lt.matrix.mul_features(x));
    }
    for k in 2..=order {
        let mut next = lt.matrix.mul_features(&t_bars[k - 1]);
        next.scale(2.0);
        let prev = &t_bars[k - 2];
        for (a, b) in next.as_mut_slice().iter_mut().zip(prev.as_slice()) {
            *a -= b;
        }
        t_bars.push(next);
    }
    t_bars
}

fn mix_basis(t_bars: &[FeatureMatrix], bank: &ChebFilterBank) -> FeatureMatrix {
    let n = t_bars[0].rows();
    let mut y = FeatureMatrix::zeros(n, bank.c_out);
    for (k, t_k) in t_bars.iter().enumerate() {
        matmul_acc(&mut y, t_k, bank.theta_block(k), bank.c_out);
    }
    if let Some(bias) = &bank.bias {
        for r in 0..n {
            for (v, b) in y.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
    }
    y
}

/// Apply the filter bank, returning the output and the cached basis.
pub fn cheb_forward(
    lt: &RescaledLaplacian,
    x: &FeatureMatrix,
    bank: &ChebFilterBank,
) -> Result<(FeatureMatrix, ChebCache)> {
    bank.check_input(lt, x)?;
    let t_bars = chebyshev_basis(lt, x, bank.order);
    let y = mix_basis(&t_bars, bank);
    Ok((y, ChebCache { t_bars }))
}

/// Apply the filter bank without keeping the basis.
pub fn cheb_apply(
    lt: &RescaledLaplacian,
    x: &FeatureMatrix,
    bank: &ChebFilterBank,
) -> Result<FeatureMatrix> {
    bank.check_input(lt, x)?;
    let t_bars = chebyshev_basis(lt, x, bank.order);
    Ok(mix_basis(&t_bars, bank))
}

/// Reverse-mode gradients with a precomputed basis.
///
/// `dTheta[k][c][o] = <T_k[:, c], dY[:, o]>` accumulated in `f64`. The input
/// gradient runs the recursion transposed (`Lt` is symmetric, so its adjoint
/// reuses the same matrix):
///
/// ```text
/// U_K     = dY Theta_K^T
/// U_k     = dY Theta_k^T + 2 Lt U_{k+1} - U_{k+2}     (K > k >= 1)
/// dX      = dY Theta_0^T + Lt U_1 - U_2
/// ```
///
/// Computing `dX` is skipped when `need_dx` is false (first layer).
pub fn cheb_backward_cached(
    lt: &RescaledLaplacian,
    cache: &ChebCache,
    bank: &ChebFilterBank,
    dy: &FeatureMatrix,
    need_dx: bool,
) -> Result<(Option<FeatureMatrix>, ChebGrads)> {
    let n = lt.dim();
    dy.expect_rows("cheb upstream gradient rows", n)?;
    dy.expect_cols("cheb upstream gradient channels", bank.c_out)?;
    if cache.t_bars.len() != bank.order + 1 {
        return Err(Error::ShapeMismatch {
            context: "cheb cache order",
            expected: bank.order + 1,
            actual: cache.t_bars.len(),
        });
    }

    let (c_in, c_out) = (bank.c_in, bank.c_out);
    let mut d_theta_acc = vec![0.0f64; (bank.order + 1) * c_in * c_out];
    let mut dy_row64 = vec![0.0f64; c_out];
    for (k, t_k) in cache.t_bars.iter().enumerate() {
        let block = &mut d_theta_acc[k * c_in * c_out..(k + 1) * c_in * c_out];
        for r in 0..n {
            for (d, &v) in dy_row64.iter_mut().zip(dy.row(r)) {
                *d = v as f64;
            }
            for (&t, acc_row) in t_k.row(r).iter().zip(block.chunks_exact_mut(c_out)) {
                if t != 0.0 {
                    let t = t as f64;
                    for (acc, &g) in acc_row.iter_mut().zip(&dy_row64) {
                        *acc += t * g;
                    }
                }
            }
        }
    }
    let d_theta: Vec<f32> = d_theta_acc.iter().map(|&v| v as f32).collect();

    let d_bias = bank.bias.as_ref().map(|_| {
        let mut db = vec![0.0f64; c_out];
        for r in 0..n {
            for (acc, &g) in db.iter_mut().zip(dy.row(r)) {
                *acc += g as f64;
            }
        }
        db.iter().map(|&v| v as f32).collect::<Vec<f32>>()
    });

    let dx = if need_dx {
        let order = bank.order;
        let mut dx = FeatureMatrix::zeros(n, c_in);
        matmul_transposed_acc(&mut dx, dy, bank.theta_block(0), c_in);
        if order >= 1 {
            // u_next = U_{k+1}, u_next2 = U_{k+2} while computing U_k.
            let mut u_next = FeatureMatrix::zeros(n, c_in);
            let mut u_next2 = FeatureMatrix::zeros(n, c_in);
            for k in (1..=order).rev() {
                let mut u_k = FeatureMatrix::zeros(n, c_in);
                matmul_transposed_acc(&mut u_k, dy, bank.theta_block(k), c_in);
                if k < order {
                    let mut prop = lt.matrix.mul_features(&u_next);
                    prop.scale(2.0);
                    u_k.add_assign(&prop);
                }
                if k + 2 <= order {
                    for (a, b) in u_k.as_mut_slice().iter_mut().zip(u_next2.as_slice()) {
                        *a -= b;
                    }
                }
                u_next2 = core::mem::replace(&mut u_next, u_k);
            }
            // u_next = U_1, u_next2 = U_2.
            dx.add_assign(&lt.matrix.mul_features(&u_next));
            if order >= 2 {
                for (a, b) in dx.as_mut_slice().iter_mut().zip(u_next2.as_slice()) {
                    *a -= b;
                }
            }
        }
        Some(dx)
    } else {
        None
    };

    Ok((dx, ChebGrads { d_theta, d_bias }))
}

/// Reverse-mode gradients recomputing the basis from `x`.
pub fn cheb_backward(
    lt: &RescaledLaplacian,
    x: &FeatureMatrix,
    bank: &ChebFilterBank,
    dy: &FeatureMatrix,
) -> Result<(FeatureMatrix, ChebGrads)> {
    bank.check_input(lt, x)?;
    let cache = ChebCache { t_bars: chebyshev_basis(lt, x, bank.order) };
    let (dx, grads) = cheb_backward_cached(lt, &cache, bank, dy, true)?;
    Ok((dx.expect("dx requested"), grads))
}

/// Dense spectral evaluation of the same filter map, used only to verify the
/// recursion: eigendecompose `Lt`, apply the scalar Chebyshev polynomials to
/// the eigenvalues, mix channels, and rotate back.
pub fn cheb_spectral_oracle(
    lt_dense: &DenseMatrix,
    x: &FeatureMatrix,
    bank: &ChebFilterBank,
) -> Result<FeatureMatrix> {
    if lt_dense.rows() != lt_dense.cols() || !lt_dense.is_symmetric(1e-9) {
        return Err(Error::NotSymmetric);
    }
    let n = lt_dense.rows();
    x.expect_rows("spectral oracle input rows", n)?;
    x.expect_cols("spectral oracle input channels", bank.input_channels())?;

    let eig = sym_eigen(lt_dense)?;
    let u = &eig.vectors;

    // x_hat = U^T X
    let x_hat = DenseMatrix::from_fn(n, bank.input_channels(), |r, c| {
        (0..n).map(|i| u.get(i, r) * x.get(i, c) as f64).sum()
    });

    // Scalar Chebyshev values T_k(lambda_i) for every eigenvalue.
    let order = bank.order();
    let mut t_scalar = vec![vec![0.0f64; n]; order + 1];
    for i in 0..n {
        t_scalar[0][i] = 1.0;
    }
    if order >= 1 {
        for i in 0..n {
            t_scalar[1][i] = eig.values[i];
        }
    }
    for k in 2..=order {
        for i in 0..n {
            t_scalar[k][i] = 2.0 * eig.values[i] * t_scalar[k - 1][i] - t_scalar[k - 2][i];
        }
    }

    // y_hat[i, o] = sum_k T_k(lambda_i) * sum_c x_hat[i, c] theta[k][c][o]
    let c_out = bank.output_channels();
    let mut y_hat = DenseMatrix::zeros(n, c_out);
    for k in 0..=order {
        for i in 0..n {
            let t = t_scalar[k][i];
            for c in 0..bank.input_channels() {
                let xv = x_hat.get(i, c) * t;
                if xv != 0.0 {
                    for o in 0..c_out {
                        let cur = y_hat.get(i, o);
                        y_hat.set(i, o, cur + xv * bank.coeff(k, c, o) as f64);
                    }
                }
            }
        }
    }

    // Y = U y_hat (+ bias)
    let mut y = FeatureMatrix::zeros(n, c_out);
    for r in 0..n {
        for o in 0..c_out {
            let mut acc = 0.0f64;
            for i in 0..n {
                acc += u.get(r, i) * y_hat.get(i, o);
            }
            if let Some(bias) = &bank.bias {
                acc += bias[o] as f64;
            }
            y.set(r, o, acc as f32);
        }
    }
    Ok(y)
}
