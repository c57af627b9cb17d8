//! Adam optimizer.
//!
//! Standard update with bias correction:
//!
//! ```text
//! m <- b1 m + (1 - b1) g        v <- b2 v + (1 - b2) g^2
//! p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```
//!
//! Weight decay never enters here; the model adds `2 * lambda * w` to the
//! gradients, so the optimizer sees one combined gradient stream.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::model::{ModelGrads, ModelParams};
use crate::{Error, Result};

/// Adam hyperparameters. Defaults: lr 1e-3, betas 0.9 / 0.999, eps 1e-8.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    /// Zeroed state mirroring the parameter tensor list.
    pub fn new_for(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            v: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            t: 0,
        }
    }
}

/// One Adam update over a single tensor. `t` is the already-incremented step
/// counter (1 on the first call).
pub fn adam_update_slice(
    p: &mut [f32],
    g: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    h: &AdamHyper,
) {
    debug_assert!(t >= 1);
    let b1 = h.beta1 as f32;
    let b2 = h.beta2 as f32;
    let bias1 = 1.0 / (1.0 - h.beta1.powi(t as i32));
    let bias2 = 1.0 / (1.0 - h.beta2.powi(t as i32));
    let lr = h.lr;
    let eps = h.eps;
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m as f64 * bias1;
        let v_hat = *v as f64 * bias2;
        *p -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
    }
}

/// Apply one optimizer step across every model tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut AdamState,
    h: &AdamHyper,
) -> Result<()> {
    state.t += 1;
    let t = state.t;
    let mut p_tensors = params.tensors_mut();
    let g_tensors = grads.tensors();
    if p_tensors.len() != g_tensors.len() || p_tensors.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            context: "adam tensor count",
            expected: p_tensors.len(),
            actual: g_tensors.len().min(state.m.len()),
        });
    }
    for (i, (p, g)) in p_tensors.iter_mut().zip(&g_tensors).enumerate() {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch {
                context: "adam tensor length",
                expected: p.len(),
                actual: g.len(),
            });
        }
        adam_update_slice(p, g, &mut state.m[i], &mut state.v[i], t, h);
    }
    Ok(())
}
