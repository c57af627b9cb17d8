//! Differentiable layers around the graph convolution: ReLU, inverted
//! dropout, global max+variance pooling, multi-resolution pooling over
//! farthest-point clusters, the fully-connected softmax head, and the
//! class-weighted cross-entropy loss.
//!
//! Every layer returns a cache alongside its output; the matching
//! `*_backward` consumes the cache by reference and reproduces the exact
//! adjoint of the forward computation. Max reductions break ties toward the
//! lowest index so backward routing is deterministic.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;

use crate::linalg::FeatureMatrix;
use crate::pointcloud::{farthest_point_sample_from, PointCloud};
use crate::rng::rng_from;
use crate::{Error, Result};

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// ReLU

pub struct ReluCache {
    positive: Vec<bool>,
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &FeatureMatrix) -> (FeatureMatrix, ReluCache) {
    let positive = x.as_slice().iter().map(|&v| v > 0.0).collect();
    (x.map(|v| v.max(0.0)), ReluCache { positive })
}

/// Zeroes the gradient wherever the forward input was <= 0.
pub fn relu_backward(cache: &ReluCache, d_out: &FeatureMatrix) -> FeatureMatrix {
    assert_eq!(cache.positive.len(), d_out.as_slice().len());
    let mut dx = d_out.clone();
    for (g, &keep) in dx.as_mut_slice().iter_mut().zip(&cache.positive) {
        if !keep {
            *g = 0.0;
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Dropout

/// Per-entry scale factors: `1 / keep_prob` for kept entries, `0` for
/// dropped ones, `1` everywhere in eval mode.
pub struct DropoutMask {
    scale: Vec<f32>,
}

fn dropout_slice(
    x: &[f32],
    keep_prob: f32,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(Vec<f32>, DropoutMask)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::InvalidKeepProb(keep_prob));
    }
    if mode == Mode::Eval || keep_prob == 1.0 {
        return Ok((x.to_vec(), DropoutMask { scale: vec![1.0; x.len()] }));
    }
    let inv = 1.0 / keep_prob;
    let mut out = Vec::with_capacity(x.len());
    let mut scale = Vec::with_capacity(x.len());
    for &v in x {
        let s = if rng.gen::<f32>() < keep_prob { inv } else { 0.0 };
        scale.push(s);
        out.push(v * s);
    }
    Ok((out, DropoutMask { scale }))
}

/// Inverted dropout: kept entries are scaled by `1 / keep_prob` during
/// training so eval mode is the identity.
pub fn dropout(
    x: &FeatureMatrix,
    keep_prob: f32,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(FeatureMatrix, DropoutMask)> {
    let (data, mask) = dropout_slice(x.as_slice(), keep_prob, mode, rng)?;
    Ok((FeatureMatrix::from_vec(x.rows(), x.cols(), data), mask))
}

/// Dropout over a flat vector (the FC input).
pub fn dropout_vec(
    x: &[f32],
    keep_prob: f32,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(Vec<f32>, DropoutMask)> {
    dropout_slice(x, keep_prob, mode, rng)
}

pub fn dropout_backward(mask: &DropoutMask, d_out: &[f32]) -> Vec<f32> {
    assert_eq!(mask.scale.len(), d_out.len());
    d_out.iter().zip(&mask.scale).map(|(&g, &s)| g * s).collect()
}

// ---------------------------------------------------------------------------
// Global pooling

/// Output of global pooling: per-channel max followed by per-channel
/// population variance, plus the argmax row of every channel.
pub struct GlobalPoolOut {
    /// `[max_0, .., max_{C-1}, var_0, .., var_{C-1}]`
    pub pooled: Vec<f32>,
    /// Row index attaining each channel's max (lowest index on ties).
    pub argmax: Vec<usize>,
}

pub struct GlobalPoolCache {
    rows: usize,
    argmax: Vec<usize>,
    /// Centered values `x - mean` per entry, for the variance adjoint.
    centered: FeatureMatrix,
}

/// Columnwise max and population variance across all rows.
pub fn global_pool(x: &FeatureMatrix) -> Result<(GlobalPoolOut, GlobalPoolCache)> {
    let (n, c) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, actual: n });
    }
    let mut max_vals = vec![f32::NEG_INFINITY; c];
    let mut argmax = vec![0usize; c];
    let mut sums = vec![0.0f64; c];
    for r in 0..n {
        for (j, &v) in x.row(r).iter().enumerate() {
            if v > max_vals[j] {
                max_vals[j] = v;
                argmax[j] = r;
            }
            sums[j] += v as f64;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let mut centered = FeatureMatrix::zeros(n, c);
    let mut var_acc = vec![0.0f64; c];
    for r in 0..n {
        let src = x.row(r);
        let dst = centered.row_mut(r);
        for j in 0..c {
            let d = src[j] as f64 - means[j];
            dst[j] = d as f32;
            var_acc[j] += d * d;
        }
    }
    let mut pooled = Vec::with_capacity(2 * c);
    pooled.extend_from_slice(&max_vals);
    pooled.extend(var_acc.iter().map(|&v| (v / n as f64) as f32));
    Ok((GlobalPoolOut { pooled, argmax: argmax.clone() }, GlobalPoolCache { rows: n, argmax, centered }))
}

/// Adjoint of global pooling: the max part routes to the argmax row, the
/// variance part distributes `2 (x_i - mean) / n`.
pub fn global_pool_backward(cache: &GlobalPoolCache, d_pooled: &[f32]) -> FeatureMatrix {
    let n = cache.rows;
    let c = cache.argmax.len();
    assert_eq!(d_pooled.len(), 2 * c);
    let (d_max, d_var) = d_pooled.split_at(c);
    let mut dx = FeatureMatrix::zeros(n, c);
    for (j, (&row, &g)) in cache.argmax.iter().zip(d_max).enumerate() {
        dx.set(row, j, g);
    }
    let inv_n = 2.0 / n as f32;
    for r in 0..n {
        let cen = cache.centered.row(r);
        let out = dx.row_mut(r);
        for j in 0..c {
            out[j] += d_var[j] * inv_n * cen[j];
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Multi-resolution pooling

/// How cluster membership is derived from the sampled centroids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterMode {
    /// Each centroid pools its `cluster_k` nearest original points
    /// (overlapping clusters); the default.
    Neighbors,
    /// Every original point joins its nearest centroid (a partition).
    Partition,
}

/// Precomputed pooling structure: purely geometric, so it can be built once
/// per cloud and reused across training steps.
#[derive(Clone, Debug)]
pub struct ClusterPlan {
    pub centroid_indices: Vec<usize>,
    /// Original-point members of each centroid's cluster.
    pub clusters: Vec<Vec<u32>>,
    pub centroid_cloud: PointCloud,
}

/// Select centroids by farthest point sampling and form clusters.
pub fn plan_clusters(
    cloud: &PointCloud,
    m: usize,
    cluster_k: usize,
    first: usize,
    mode: ClusterMode,
) -> Result<ClusterPlan> {
    let n = cloud.len();
    if m > n {
        return Err(Error::SampleCountExceedsPoints { requested: m, available: n });
    }
    if cluster_k > n {
        return Err(Error::SampleCountExceedsPoints { requested: cluster_k, available: n });
    }
    let centroid_indices = farthest_point_sample_from(cloud, m, first)?;
    let mut clusters: Vec<Vec<u32>> = vec![Vec::new(); m];
    match mode {
        ClusterMode::Neighbors => {
            let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(n);
            for (slot, &ci) in centroid_indices.iter().enumerate() {
                scratch.clear();
                let center = cloud.points[ci];
                for (j, p) in cloud.points.iter().enumerate() {
                    scratch.push((center.dist2(p), j as u32));
                }
                scratch.select_nth_unstable_by(cluster_k - 1, |a, b| {
                    a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
                });
                let mut members: Vec<u32> =
                    scratch[..cluster_k].iter().map(|&(_, j)| j).collect();
                members.sort_unstable();
                clusters[slot] = members;
            }
        }
        ClusterMode::Partition => {
            for (j, p) in cloud.points.iter().enumerate() {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (slot, &ci) in centroid_indices.iter().enumerate() {
                    let d = cloud.points[ci].dist2(p);
                    if d < best_d {
                        best_d = d;
                        best = slot;
                    }
                }
                clusters[best].push(j as u32);
            }
        }
    }
    let centroid_cloud = cloud.select(&centroid_indices);
    Ok(ClusterPlan { centroid_indices, clusters, centroid_cloud })
}

pub struct MultiresCache {
    input_rows: usize,
    /// For each pooled (row, channel): the source row that won the max.
    argmax: Vec<u32>,
    cols: usize,
}

/// Columnwise max over each cluster. Empty partitions pool the centroid's
/// own feature row.
pub fn pool_clusters(x: &FeatureMatrix, plan: &ClusterPlan) -> (FeatureMatrix, MultiresCache) {
    let m = plan.clusters.len();
    let c = x.cols();
    let mut out = FeatureMatrix::zeros(m, c);
    let mut argmax = vec![0u32; m * c];
    for (slot, members) in plan.clusters.iter().enumerate() {
        let own = plan.centroid_indices[slot] as u32;
        let members: &[u32] = if members.is_empty() { core::slice::from_ref(&own) } else { members };
        let out_row = out.row_mut(slot);
        let arg_row = &mut argmax[slot * c..(slot + 1) * c];
        out_row.iter_mut().for_each(|v| *v = f32::NEG_INFINITY);
        for &j in members {
            let src = x.row(j as usize);
            for (&v, (o, a)) in src.iter().zip(out_row.iter_mut().zip(arg_row.iter_mut())) {
                if v > *o {
                    *o = v;
                    *a = j;
                }
            }
        }
    }
    (out, MultiresCache { input_rows: x.rows(), argmax, cols: c })
}

/// Adjoint of cluster max pooling: each output gradient flows to its argmax
/// source row, accumulating across overlapping clusters.
pub fn pool_clusters_backward(cache: &MultiresCache, d_out: &FeatureMatrix) -> FeatureMatrix {
    assert_eq!(d_out.cols(), cache.cols);
    assert_eq!(d_out.rows() * cache.cols, cache.argmax.len());
    let mut dx = FeatureMatrix::zeros(cache.input_rows, cache.cols);
    let c = cache.cols;
    for slot in 0..d_out.rows() {
        let g_row = d_out.row(slot);
        let arg_row = &cache.argmax[slot * c..(slot + 1) * c];
        for (j, (&g, &src)) in g_row.iter().zip(arg_row).enumerate() {
            if g != 0.0 {
                let row = dx.row_mut(src as usize);
                row[j] += g;
            }
        }
    }
    dx
}

/// Full multi-resolution pooling: FPS centroids (seeded random first point),
/// cluster formation, and columnwise max aggregation. Returns the pooled
/// features and the centroid cloud that the coarse graph is built on.
pub fn multires_pool(
    x: &FeatureMatrix,
    cloud: &PointCloud,
    m: usize,
    cluster_k: usize,
    seed: u64,
    mode: ClusterMode,
) -> Result<(FeatureMatrix, PointCloud, MultiresCache)> {
    x.expect_rows("multires pool features", cloud.len())?;
    let first = rng_from(seed).gen_range(0..cloud.len());
    let plan = plan_clusters(cloud, m, cluster_k, first, mode)?;
    let (pooled, cache) = pool_clusters(x, &plan);
    Ok((pooled, plan.centroid_cloud, cache))
}

// ---------------------------------------------------------------------------
// Fully-connected softmax head

pub struct FcCache {
    input: Vec<f32>,
}

/// `softmax(W f + b)` with the max-logit subtraction for stability.
pub fn fc_softmax(input: &[f32], weight: &FeatureMatrix, bias: &[f32]) -> Result<(Vec<f32>, FcCache)> {
    let classes = weight.rows();
    weight.expect_cols("fc weight columns", input.len())?;
    if bias.len() != classes {
        return Err(Error::ShapeMismatch {
            context: "fc bias length",
            expected: classes,
            actual: bias.len(),
        });
    }
    let mut logits = Vec::with_capacity(classes);
    for cls in 0..classes {
        let mut acc = 0.0f64;
        for (&w, &f) in weight.row(cls).iter().zip(input) {
            acc += w as f64 * f as f64;
        }
        logits.push(acc + bias[cls] as f64);
    }
    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max_logit).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps.iter().map(|&e| (e / total) as f32).collect();
    Ok((probs, FcCache { input: input.to_vec() }))
}

/// Gradients of the FC layer given the loss gradient at the logits.
pub fn fc_backward(
    cache: &FcCache,
    weight: &FeatureMatrix,
    d_logits: &[f32],
) -> (FeatureMatrix, Vec<f32>, Vec<f32>) {
    let classes = weight.rows();
    assert_eq!(d_logits.len(), classes);
    let feat = &cache.input;
    let mut d_weight = FeatureMatrix::zeros(classes, feat.len());
    for (cls, &g) in d_logits.iter().enumerate() {
        if g != 0.0 {
            let row = d_weight.row_mut(cls);
            for (d, &f) in row.iter_mut().zip(feat) {
                *d = g * f;
            }
        }
    }
    let d_bias = d_logits.to_vec();
    let mut d_input = vec![0.0f32; feat.len()];
    for (cls, &g) in d_logits.iter().enumerate() {
        if g != 0.0 {
            for (d, &w) in d_input.iter_mut().zip(weight.row(cls)) {
                *d += g * w;
            }
        }
    }
    (d_weight, d_bias, d_input)
}

// ---------------------------------------------------------------------------
// Class-weighted cross-entropy

/// Per-class loss weights, positive and normalized to mean 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    /// All-ones weights; weighted and unweighted losses coincide exactly.
    pub fn uniform(classes: usize) -> Self {
        Self { weights: vec![1.0; classes] }
    }

    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Inverse-frequency weights normalized to mean 1.
pub fn class_weights_from_counts(counts: &[usize]) -> Result<ClassWeights> {
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyClass(c));
        }
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let mean: f64 = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(ClassWeights { weights: inv.iter().map(|&v| v / mean).collect() })
}

/// `-w[label] * log(p[label] + 1e-12)` and its gradient with respect to the
/// logits, `w[label] * (p - onehot(label))`.
pub fn weighted_cross_entropy(
    probs: &[f32],
    label: usize,
    weights: &ClassWeights,
) -> Result<(f32, Vec<f32>)> {
    let classes = probs.len();
    if label >= classes || weights.len() != classes {
        return Err(Error::LabelOutOfRange { label, class_count: classes.min(weights.len()) });
    }
    let w = weights.get(label);
    let loss = -w * ((probs[label] as f64 + 1e-12).ln());
    let w32 = w as f32;
    let mut d_logits: Vec<f32> = probs.iter().map(|&p| w32 * p).collect();
    d_logits[label] -= w32;
    Ok((loss as f32, d_logits))
}

// ---------------------------------------------------------------------------
// Active points

/// One record per filter of a globally pooled layer: the vertex that won the
/// max, used for introspection/visualization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActivePoint {
    pub layer: u8,
    pub filter: u32,
    pub vertex: u32,
}

/// Expand per-filter argmax rows into active-point records for one layer.
pub fn active_points(argmax: &[usize], layer: u8) -> Vec<ActivePoint> {
    argmax
        .iter()
        .enumerate()
        .map(|(f, &v)| ActivePoint { layer, filter: f as u32, vertex: v as u32 })
        .collect()
}
