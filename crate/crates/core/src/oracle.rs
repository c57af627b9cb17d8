//! All-`f64` dense reference implementations used to verify the production
//! pipeline. Nothing here runs on a training path.
//!
//! The reference model mirrors the network layer by layer but evaluates in
//! dense double precision with dropout disabled, which makes it a smooth
//! function of a flat parameter vector: exactly what central finite
//! differences need. Gradient tests compare the production backward pass
//! against difference quotients of [`ReferenceModel::loss`].

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::linalg::DenseMatrix;
use crate::model::{ModelConfig, ModelGrads, ModelParams, PoolingMode, Prepared};
use crate::nn::ClassWeights;

/// Flatten parameters in [`ModelParams::tensors`] order.
pub fn flatten_params(params: &ModelParams) -> Vec<f64> {
    params.tensors().iter().flat_map(|t| t.iter().map(|&v| v as f64)).collect()
}

/// Flatten gradients in the same order.
pub fn flatten_grads(grads: &ModelGrads) -> Vec<f64> {
    grads.tensors().iter().flat_map(|t| t.iter().map(|&v| v as f64)).collect()
}

/// Cluster structure copied out of a [`Prepared`] value.
pub struct ReferenceCoarse {
    pub clusters: Vec<Vec<u32>>,
    pub centroid_indices: Vec<usize>,
    pub lt: DenseMatrix,
}

/// Dense double-precision mirror of the network for one prepared cloud.
pub struct ReferenceModel {
    pub lt: DenseMatrix,
    /// `n x 3` input signals.
    pub features: DenseMatrix,
    pub coarse: Option<ReferenceCoarse>,
    pub config: ModelConfig,
}

/// Dense `f64` Chebyshev filter application, the reference the sparse `f32`
/// recursion is checked against.
pub fn reference_cheb_apply(
    lt: &DenseMatrix,
    x: &DenseMatrix,
    order: usize,
    c_out: usize,
    theta: &[f64],
    bias: Option<&[f64]>,
) -> DenseMatrix {
    let (n, c_in) = (x.rows(), x.cols());
    let matvec = |m: &DenseMatrix| -> DenseMatrix {
        DenseMatrix::from_fn(n, c_in, |r, c| (0..n).map(|j| lt.get(r, j) * m.get(j, c)).sum())
    };
    let mut y = DenseMatrix::zeros(n, c_out);
    let mix = |y: &mut DenseMatrix, t: &DenseMatrix, k: usize| {
        for r in 0..n {
            for c in 0..c_in {
                let tv = t.get(r, c);
                for o in 0..c_out {
                    let cur = y.get(r, o);
                    y.set(r, o, cur + tv * theta[(k * c_in + c) * c_out + o]);
                }
            }
        }
    };
    let mut t_prev2 = x.clone();
    mix(&mut y, &t_prev2, 0);
    if order >= 1 {
        let t1 = matvec(&t_prev2);
        mix(&mut y, &t1, 1);
        let mut t_prev = t1;
        for k in 2..=order {
            let lt_t = matvec(&t_prev);
            let t_next = DenseMatrix::from_fn(n, c_in, |r, c| {
                2.0 * lt_t.get(r, c) - t_prev2.get(r, c)
            });
            mix(&mut y, &t_next, k);
            t_prev2 = t_prev;
            t_prev = t_next;
        }
    }
    if let Some(b) = bias {
        for r in 0..n {
            for o in 0..c_out {
                let cur = y.get(r, o);
                y.set(r, o, cur + b[o]);
            }
        }
    }
    y
}

fn dense_relu(x: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c).max(0.0))
}

/// Columnwise max then population variance, concatenated.
fn dense_global_pool(x: &DenseMatrix) -> Vec<f64> {
    let (n, c) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(2 * c);
    for j in 0..c {
        out.push((0..n).map(|r| x.get(r, j)).fold(f64::NEG_INFINITY, f64::max));
    }
    for j in 0..c {
        let mean: f64 = (0..n).map(|r| x.get(r, j)).sum::<f64>() / n as f64;
        out.push((0..n).map(|r| (x.get(r, j) - mean).powi(2)).sum::<f64>() / n as f64);
    }
    out
}

fn dense_cluster_pool(x: &DenseMatrix, coarse: &ReferenceCoarse) -> DenseMatrix {
    DenseMatrix::from_fn(coarse.clusters.len(), x.cols(), |slot, c| {
        let members = &coarse.clusters[slot];
        if members.is_empty() {
            x.get(coarse.centroid_indices[slot], c)
        } else {
            members.iter().map(|&j| x.get(j as usize, c)).fold(f64::NEG_INFINITY, f64::max)
        }
    })
}

impl ReferenceModel {
    /// Copy the geometric structure of a prepared cloud into dense `f64`.
    pub fn from_prepared(prep: &Prepared, config: &ModelConfig) -> Self {
        let n = prep.cloud.len();
        let features =
            DenseMatrix::from_fn(n, 3, |r, c| prep.features.get(r, c) as f64);
        let coarse = prep.coarse.as_ref().map(|c| ReferenceCoarse {
            clusters: c.plan.clusters.clone(),
            centroid_indices: c.plan.centroid_indices.clone(),
            lt: c.lt.matrix.to_dense(),
        });
        Self { lt: prep.lt.matrix.to_dense(), features, coarse, config: config.clone() }
    }

    fn split<'a>(&self, flat: &'a [f64]) -> (&'a [f64], Option<&'a [f64]>, &'a [f64], Option<&'a [f64]>, &'a [f64], &'a [f64]) {
        let k1 = self.config.cheb_order + 1;
        let [f1, f2] = self.config.filters;
        let fc_dim = self.config.fc_input_dim();
        let c = self.config.class_count;
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let s = &flat[cursor..cursor + len];
            cursor += len;
            s
        };
        let conv1_theta = take(k1 * 3 * f1);
        let conv1_bias = self.config.use_bias.then(|| take(f1));
        let conv2_theta = take(k1 * f1 * f2);
        let conv2_bias = self.config.use_bias.then(|| take(f2));
        let fc_w = take(c * fc_dim);
        let fc_b = take(c);
        assert_eq!(cursor, flat.len(), "flat parameter vector length mismatch");
        (conv1_theta, conv1_bias, conv2_theta, conv2_bias, fc_w, fc_b)
    }

    /// Class probabilities for a flat parameter vector (dropout disabled).
    pub fn probs(&self, flat: &[f64]) -> Vec<f64> {
        let (c1t, c1b, c2t, c2b, fc_w, fc_b) = self.split(flat);
        let order = self.config.cheb_order;
        let [f1, f2] = self.config.filters;
        let d1 = dense_relu(&reference_cheb_apply(&self.lt, &self.features, order, f1, c1t, c1b));
        let fc_input: Vec<f64> = match self.config.pooling {
            PoolingMode::Global => {
                let mut v = dense_global_pool(&d1);
                let d2 = dense_relu(&reference_cheb_apply(&self.lt, &d1, order, f2, c2t, c2b));
                v.extend(dense_global_pool(&d2));
                v
            }
            PoolingMode::Multires => {
                let coarse = self.coarse.as_ref().expect("reference lacks coarse structure");
                let pooled = dense_cluster_pool(&d1, coarse);
                let d2 = dense_relu(&reference_cheb_apply(&coarse.lt, &pooled, order, f2, c2t, c2b));
                let mut v = if self.config.concat_layer1_stats {
                    dense_global_pool(&d1)
                } else {
                    Vec::new()
                };
                v.extend(dense_global_pool(&d2));
                v
            }
        };
        let classes = self.config.class_count;
        let logits: Vec<f64> = (0..classes)
            .map(|cls| {
                fc_input
                    .iter()
                    .enumerate()
                    .map(|(j, &f)| fc_w[cls * fc_input.len() + j] * f)
                    .sum::<f64>()
                    + fc_b[cls]
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        logits.iter().map(|l| (l - max).exp() / z).collect()
    }

    /// Weighted cross-entropy plus the l2 penalty over weight tensors.
    pub fn loss(
        &self,
        flat: &[f64],
        label: usize,
        weights: &ClassWeights,
        lambda: f64,
    ) -> f64 {
        let probs = self.probs(flat);
        let mut loss = -weights.get(label) * (probs[label] + 1e-12).ln();
        if lambda > 0.0 {
            let (c1t, _, c2t, _, fc_w, _) = self.split(flat);
            let sq = |s: &[f64]| s.iter().map(|&v| v * v).sum::<f64>();
            loss += lambda * (sq(c1t) + sq(c2t) + sq(fc_w));
        }
        loss
    }

    /// Distance to the nearest nondifferentiability: the smallest |input| of
    /// any ReLU and the smallest gap between the top two values of any
    /// max-pooled column or cluster. Finite-difference checks require this
    /// margin to dominate the step size; callers resample otherwise.
    pub fn kink_margin(&self, flat: &[f64]) -> f64 {
        let (c1t, c1b, c2t, c2b, _, _) = self.split(flat);
        let order = self.config.cheb_order;
        let [f1, f2] = self.config.filters;
        let mut margin = f64::INFINITY;
        let relu_margin = |z: &DenseMatrix, margin: &mut f64| {
            for r in 0..z.rows() {
                for c in 0..z.cols() {
                    *margin = margin.min(z.get(r, c).abs());
                }
            }
        };
        // A max over post-ReLU values whose best entry is <= 0 is locally
        // constant (the clamped zeros cannot move), so only live maxima
        // constrain the margin.
        let max_gap = |x: &DenseMatrix, rows: &mut dyn Iterator<Item = usize>, c: usize| -> f64 {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for r in rows {
                let v = x.get(r, c);
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
            if best <= 0.0 {
                f64::INFINITY
            } else {
                best - second
            }
        };
        let column_gaps = |x: &DenseMatrix, margin: &mut f64| {
            for c in 0..x.cols() {
                *margin = margin.min(max_gap(x, &mut (0..x.rows()), c));
            }
        };

        let z1 = reference_cheb_apply(&self.lt, &self.features, order, f1, c1t, c1b);
        relu_margin(&z1, &mut margin);
        let d1 = dense_relu(&z1);
        match self.config.pooling {
            PoolingMode::Global => {
                column_gaps(&d1, &mut margin);
                let z2 = reference_cheb_apply(&self.lt, &d1, order, f2, c2t, c2b);
                relu_margin(&z2, &mut margin);
                let d2 = dense_relu(&z2);
                column_gaps(&d2, &mut margin);
            }
            PoolingMode::Multires => {
                let coarse = self.coarse.as_ref().expect("reference lacks coarse structure");
                if self.config.concat_layer1_stats {
                    column_gaps(&d1, &mut margin);
                }
                for members in &coarse.clusters {
                    if members.len() > 1 {
                        for c in 0..d1.cols() {
                            let mut rows = members.iter().map(|&j| j as usize);
                            margin = margin.min(max_gap(&d1, &mut rows, c));
                        }
                    }
                }
                let pooled = dense_cluster_pool(&d1, coarse);
                let z2 = reference_cheb_apply(&coarse.lt, &pooled, order, f2, c2t, c2b);
                relu_margin(&z2, &mut margin);
                let d2 = dense_relu(&z2);
                column_gaps(&d2, &mut margin);
            }
        }
        margin
    }

    /// Central finite-difference gradient of [`Self::loss`] over every
    /// parameter.
    pub fn fd_gradient(
        &self,
        flat: &[f64],
        label: usize,
        weights: &ClassWeights,
        lambda: f64,
        h: f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; flat.len()];
        let mut work = flat.to_vec();
        for i in 0..flat.len() {
            work[i] = flat[i] + h;
            let up = self.loss(&work, label, weights, lambda);
            work[i] = flat[i] - h;
            let down = self.loss(&work, label, weights, lambda);
            work[i] = flat[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        grad
    }
}
