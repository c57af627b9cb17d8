//! The full network: graph construction, two Chebyshev convolution layers,
//! pooling branch, and the softmax head, with forward and reverse passes.
//!
//! Two branches share the same ingredients:
//!
//! * **global** - conv1 + ReLU, conv2 + ReLU on the same kNN graph; global
//!   max+variance pooling after each conv layer; the two pooled vectors are
//!   concatenated into the classifier input.
//! * **multires** - conv1 + ReLU on the full graph, farthest-point
//!   downsampling with cluster max pooling, a fresh kNN graph on the
//!   centroids, conv2 + ReLU, then one global pooling step.
//!
//! Heavy geometric structure (graphs, Laplacians, cluster plans) depends only
//! on the input cloud, so it is computed once into a [`Prepared`] value that
//! forward passes share; the training loop reuses one `Prepared` per cloud
//! across epochs.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;

use crate::chebfilter::{
    cheb_backward_cached, cheb_forward, ChebCache, ChebFilterBank, ChebGrads,
};
use crate::graph::{rescaled_laplacian_for, RescaledLaplacian, SigmaPolicy};
use crate::linalg::FeatureMatrix;
use crate::nn::{
    active_points, dropout, dropout_backward, dropout_vec, fc_backward, fc_softmax, global_pool,
    global_pool_backward, plan_clusters, pool_clusters, pool_clusters_backward, relu,
    relu_backward, ActivePoint, ClassWeights, ClusterMode, ClusterPlan, DropoutMask, FcCache,
    GlobalPoolCache, Mode, MultiresCache, ReluCache,
};
use crate::pointcloud::PointCloud;
use crate::rng::{cloud_content_seed, mix, rng_from};
use crate::{Error, Result};

/// Which pooling branch the network runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolingMode {
    Global,
    Multires,
}

/// All architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Neighbors for the per-cloud graph.
    pub knn_k: usize,
    /// Chebyshev polynomial order K; each filter carries K + 1 coefficients.
    pub cheb_order: usize,
    /// Filters of the two convolution layers.
    pub filters: [usize; 2],
    pub pooling: PoolingMode,
    /// Centroids kept by multi-resolution pooling.
    pub centroid_count: usize,
    /// Cluster size around each centroid.
    pub cluster_k: usize,
    pub class_count: usize,
    /// Keep probabilities: after each conv layer, and on the classifier input.
    pub dropout_keep: [f32; 2],
    /// l2 penalty coefficient; enters gradients as `2 * lambda * w`.
    pub weight_decay: f32,
    pub sigma: SigmaPolicy,
    pub cluster_mode: ClusterMode,
    /// Multires branch: also concatenate layer-1 global statistics into the
    /// classifier input (the global branch always does).
    pub concat_layer1_stats: bool,
    /// Per-output-channel bias after each Chebyshev sum.
    pub use_bias: bool,
}

impl ModelConfig {
    /// Reference architecture: 40-NN graph, order 3, 1000 + 1000 filters,
    /// 55 centroids with 50-point clusters, keep probabilities 0.9 / 0.5,
    /// weight decay 2e-4.
    pub fn with_classes(class_count: usize) -> Self {
        Self {
            knn_k: 40,
            cheb_order: 3,
            filters: [1000, 1000],
            pooling: PoolingMode::Global,
            centroid_count: 55,
            cluster_k: 50,
            class_count,
            dropout_keep: [0.9, 0.5],
            weight_decay: 2e-4,
            sigma: SigmaPolicy::MeanSquaredDistance,
            cluster_mode: ClusterMode::Neighbors,
            concat_layer1_stats: false,
            use_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(String::from(msg)));
        if self.knn_k == 0 {
            return bad("knn_k must be positive");
        }
        if self.filters[0] == 0 || self.filters[1] == 0 {
            return bad("filter counts must be positive");
        }
        if self.class_count == 0 {
            return bad("class_count must be positive");
        }
        for &p in &self.dropout_keep {
            if !(p > 0.0 && p <= 1.0) {
                return bad("dropout keep probabilities must lie in (0, 1]");
            }
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.pooling == PoolingMode::Multires {
            if self.centroid_count < 2 {
                return bad("multires pooling needs at least 2 centroids");
            }
            if self.cluster_k == 0 {
                return bad("cluster_k must be positive");
            }
        }
        Ok(())
    }

    /// Length of the vector entering the fully-connected layer.
    pub fn fc_input_dim(&self) -> usize {
        let per_layer = |f: usize| 2 * f;
        match self.pooling {
            PoolingMode::Global => per_layer(self.filters[0]) + per_layer(self.filters[1]),
            PoolingMode::Multires => {
                per_layer(self.filters[1])
                    + if self.concat_layer1_stats { per_layer(self.filters[0]) } else { 0 }
            }
        }
    }
}

/// All trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub conv1: ChebFilterBank,
    pub conv2: ChebFilterBank,
    /// `class_count x fc_input_dim`.
    pub fc_weight: FeatureMatrix,
    pub fc_bias: Vec<f32>,
}

/// Uniform Glorot initialization on `[-sqrt(6 / (fan_in + fan_out)), +..]`.
pub fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f32> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    (0..len).map(|_| rng.gen::<f32>() * 2.0 * bound - bound).collect()
}

/// Draw fresh parameters; identical seeds give bitwise-identical tensors.
/// Biases start at zero. Filter banks use fan_in = (K + 1) * C_in and
/// fan_out = C_out.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = rng_from(mix(seed, 0x9a7a));
    let k1 = config.cheb_order + 1;
    let [f1, f2] = config.filters;
    let conv1_theta = glorot_uniform(&mut rng, k1 * 3, f1, k1 * 3 * f1);
    let conv2_theta = glorot_uniform(&mut rng, k1 * f1, f2, k1 * f1 * f2);
    let fc_dim = config.fc_input_dim();
    let fc_weight = FeatureMatrix::from_vec(
        config.class_count,
        fc_dim,
        glorot_uniform(&mut rng, fc_dim, config.class_count, config.class_count * fc_dim),
    );
    let bias = |c: usize| config.use_bias.then(|| vec![0.0f32; c]);
    ModelParams {
        conv1: ChebFilterBank::from_theta(config.cheb_order, 3, f1, conv1_theta, bias(f1)),
        conv2: ChebFilterBank::from_theta(config.cheb_order, f1, f2, conv2_theta, bias(f2)),
        fc_weight,
        fc_bias: vec![0.0; config.class_count],
    }
}

impl ModelParams {
    /// Stable tensor ordering shared with gradients and optimizer state.
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![&self.conv1.theta];
        if let Some(b) = &self.conv1.bias {
            out.push(b);
        }
        out.push(&self.conv2.theta);
        if let Some(b) = &self.conv2.bias {
            out.push(b);
        }
        out.push(self.fc_weight.as_slice());
        out.push(&self.fc_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = vec![&mut self.conv1.theta];
        if let Some(b) = &mut self.conv1.bias {
            out.push(b);
        }
        out.push(&mut self.conv2.theta);
        if let Some(b) = &mut self.conv2.bias {
            out.push(b);
        }
        out.push(self.fc_weight.as_mut_slice());
        out.push(&mut self.fc_bias);
        out
    }
}

/// Geometry-dependent structure shared by every forward pass over one cloud.
#[derive(Debug)]
pub struct Prepared {
    pub cloud: PointCloud,
    pub features: FeatureMatrix,
    pub lt: RescaledLaplacian,
    pub coarse: Option<CoarseStructure>,
}

/// Multi-resolution pooling structure plus the coarse graph.
#[derive(Debug)]
pub struct CoarseStructure {
    pub plan: ClusterPlan,
    pub lt: RescaledLaplacian,
}

/// Build the per-cloud structure for a configuration.
///
/// The first FPS centroid comes from a content-derived seed, so preparation
/// is a pure function of the cloud and the same cloud always maps to the
/// same structure.
pub fn prepare(cloud: &PointCloud, config: &ModelConfig) -> Result<Prepared> {
    config.validate()?;
    let features = cloud.coordinate_features();
    let lt = rescaled_laplacian_for(cloud, config.knn_k, config.sigma)?;
    let coarse = match config.pooling {
        PoolingMode::Global => None,
        PoolingMode::Multires => {
            let m = config.centroid_count;
            if cloud.len() < m {
                return Err(Error::SampleCountExceedsPoints {
                    requested: m,
                    available: cloud.len(),
                });
            }
            let first =
                rng_from(mix(cloud_content_seed(cloud), 0xf95)).gen_range(0..cloud.len());
            let plan = plan_clusters(cloud, m, config.cluster_k, first, config.cluster_mode)?;
            let coarse_k = config.knn_k.min(m - 1);
            let lt = rescaled_laplacian_for(&plan.centroid_cloud, coarse_k, config.sigma)?;
            Some(CoarseStructure { plan, lt })
        }
    };
    Ok(Prepared { cloud: cloud.clone(), features, lt, coarse })
}

enum BranchCache {
    Global {
        pool1: GlobalPoolCache,
        cheb2: ChebCache,
        relu2: ReluCache,
        drop2: DropoutMask,
        pool2: GlobalPoolCache,
    },
    Multires {
        pool1: Option<GlobalPoolCache>,
        mp: MultiresCache,
        cheb2: ChebCache,
        relu2: ReluCache,
        drop2: DropoutMask,
        pool2: GlobalPoolCache,
    },
}

/// Everything the backward pass needs. Consumed by [`backward`], so a cache
/// can never be reused against updated parameters.
pub struct ModelCache {
    prep: Arc<Prepared>,
    cheb1: ChebCache,
    relu1: ReluCache,
    drop1: DropoutMask,
    branch: BranchCache,
    drop_fc: DropoutMask,
    fc: FcCache,
    probs: Vec<f32>,
}

/// Output of a forward pass.
pub struct ForwardPass {
    /// Class probabilities: positive, summing to 1.
    pub probs: Vec<f32>,
    /// Argmax vertex per filter for every globally pooled layer.
    pub active: Vec<ActivePoint>,
    pub cache: ModelCache,
}

impl ForwardPass {
    /// Predicted class (lowest index on ties).
    pub fn predicted_class(&self) -> usize {
        let mut best = 0usize;
        let mut best_p = f32::NEG_INFINITY;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > best_p {
                best_p = p;
                best = i;
            }
        }
        best
    }
}

/// Forward pass over a prepared cloud. The RNG drives dropout only; eval
/// mode never touches it.
pub fn forward_prepared(
    prep: &Arc<Prepared>,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<ForwardPass> {
    let keep_conv = config.dropout_keep[0];
    let keep_fc = config.dropout_keep[1];

    let (z1, cheb1) = cheb_forward(&prep.lt, &prep.features, &params.conv1)?;
    let (a1, relu1) = relu(&z1);
    let (d1, drop1) = dropout(&a1, keep_conv, mode, rng)?;

    let mut active = Vec::new();
    let (fc_input, branch) = match config.pooling {
        PoolingMode::Global => {
            let (p1, pool1_cache) = global_pool(&d1)?;
            active.extend(active_points(&p1.argmax, 1));
            let (z2, cheb2) = cheb_forward(&prep.lt, &d1, &params.conv2)?;
            let (a2, relu2) = relu(&z2);
            let (d2, drop2) = dropout(&a2, keep_conv, mode, rng)?;
            let (p2, pool2_cache) = global_pool(&d2)?;
            active.extend(active_points(&p2.argmax, 2));
            let mut fc_input = p1.pooled;
            fc_input.extend_from_slice(&p2.pooled);
            (
                fc_input,
                BranchCache::Global {
                    pool1: pool1_cache,
                    cheb2,
                    relu2,
                    drop2,
                    pool2: pool2_cache,
                },
            )
        }
        PoolingMode::Multires => {
            let coarse = prep.coarse.as_ref().ok_or(Error::InvalidConfig(String::from(
                "prepared structure lacks the multires plan",
            )))?;
            let pool1 = if config.concat_layer1_stats {
                let (p1, c1) = global_pool(&d1)?;
                active.extend(active_points(&p1.argmax, 1));
                Some((p1.pooled, c1))
            } else {
                None
            };
            let (mp_feats, mp) = pool_clusters(&d1, &coarse.plan);
            let (z2, cheb2) = cheb_forward(&coarse.lt, &mp_feats, &params.conv2)?;
            let (a2, relu2) = relu(&z2);
            let (d2, drop2) = dropout(&a2, keep_conv, mode, rng)?;
            let (p2, pool2_cache) = global_pool(&d2)?;
            active.extend(active_points(&p2.argmax, 2));
            let (fc_input, pool1_cache) = match pool1 {
                Some((mut p1v, c1)) => {
                    p1v.extend_from_slice(&p2.pooled);
                    (p1v, Some(c1))
                }
                None => (p2.pooled, None),
            };
            (
                fc_input,
                BranchCache::Multires {
                    pool1: pool1_cache,
                    mp,
                    cheb2,
                    relu2,
                    drop2,
                    pool2: pool2_cache,
                },
            )
        }
    };

    let (fc_dropped, drop_fc) = dropout_vec(&fc_input, keep_fc, mode, rng)?;
    let (probs, fc) = fc_softmax(&fc_dropped, &params.fc_weight, &params.fc_bias)?;

    Ok(ForwardPass {
        probs: probs.clone(),
        active,
        cache: ModelCache { prep: Arc::clone(prep), cheb1, relu1, drop1, branch, drop_fc, fc, probs },
    })
}

/// Prepare and run a forward pass in one call.
pub fn forward(
    cloud: &PointCloud,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<ForwardPass> {
    let prep = Arc::new(prepare(cloud, config)?);
    forward_prepared(&prep, params, config, mode, rng)
}

/// Gradients, mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub conv1_theta: Vec<f32>,
    pub conv1_bias: Option<Vec<f32>>,
    pub conv2_theta: Vec<f32>,
    pub conv2_bias: Option<Vec<f32>>,
    pub fc_weight: FeatureMatrix,
    pub fc_bias: Vec<f32>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            conv1_theta: vec![0.0; params.conv1.theta.len()],
            conv1_bias: params.conv1.bias.as_ref().map(|b| vec![0.0; b.len()]),
            conv2_theta: vec![0.0; params.conv2.theta.len()],
            conv2_bias: params.conv2.bias.as_ref().map(|b| vec![0.0; b.len()]),
            fc_weight: FeatureMatrix::zeros(params.fc_weight.rows(), params.fc_weight.cols()),
            fc_bias: vec![0.0; params.fc_bias.len()],
        }
    }

    /// Same ordering as [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![&self.conv1_theta];
        if let Some(b) = &self.conv1_bias {
            out.push(b);
        }
        out.push(&self.conv2_theta);
        if let Some(b) = &self.conv2_bias {
            out.push(b);
        }
        out.push(self.fc_weight.as_slice());
        out.push(&self.fc_bias);
        out
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        let add = |a: &mut [f32], b: &[f32]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        };
        add(&mut self.conv1_theta, &other.conv1_theta);
        if let (Some(a), Some(b)) = (&mut self.conv1_bias, &other.conv1_bias) {
            add(a, b);
        }
        add(&mut self.conv2_theta, &other.conv2_theta);
        if let (Some(a), Some(b)) = (&mut self.conv2_bias, &other.conv2_bias) {
            add(a, b);
        }
        self.fc_weight.add_assign(&other.fc_weight);
        add(&mut self.fc_bias, &other.fc_bias);
    }

    pub fn scale(&mut self, s: f32) {
        let sc = |a: &mut [f32]| a.iter_mut().for_each(|x| *x *= s);
        sc(&mut self.conv1_theta);
        if let Some(b) = &mut self.conv1_bias {
            sc(b);
        }
        sc(&mut self.conv2_theta);
        if let Some(b) = &mut self.conv2_bias {
            sc(b);
        }
        self.fc_weight.scale(s);
        sc(&mut self.fc_bias);
    }

    /// Add the l2 term `2 * lambda * w` for every weight tensor; biases are
    /// excluded from the penalty.
    pub fn add_weight_decay(&mut self, params: &ModelParams, lambda: f32) {
        if lambda == 0.0 {
            return;
        }
        let two_lambda = 2.0 * lambda;
        for (g, &w) in self.conv1_theta.iter_mut().zip(&params.conv1.theta) {
            *g += two_lambda * w;
        }
        for (g, &w) in self.conv2_theta.iter_mut().zip(&params.conv2.theta) {
            *g += two_lambda * w;
        }
        for (g, &w) in
            self.fc_weight.as_mut_slice().iter_mut().zip(params.fc_weight.as_slice())
        {
            *g += two_lambda * w;
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f32, |acc, &v| acc.max(v.abs()))
    }
}

fn matrix_dropout_backward(mask: &DropoutMask, d: &FeatureMatrix) -> FeatureMatrix {
    FeatureMatrix::from_vec(d.rows(), d.cols(), dropout_backward(mask, d.as_slice()))
}

/// Reverse pass: gradients of `weighted_ce + lambda * sum ||w||^2` with
/// respect to every parameter. Consumes the cache, so each forward pass can
/// back-propagate at most once.
pub fn backward(
    cache: ModelCache,
    label: usize,
    class_weights: &ClassWeights,
    params: &ModelParams,
    weight_decay: f32,
) -> Result<(f32, ModelGrads)> {
    let (loss, d_logits) = crate::nn::weighted_cross_entropy(&cache.probs, label, class_weights)?;
    let (d_fc_weight, d_fc_bias, d_fc_input) = fc_backward(&cache.fc, &params.fc_weight, &d_logits);
    let d_fc_raw = dropout_backward(&cache.drop_fc, &d_fc_input);

    let prep = &cache.prep;
    let (d_d1, conv2_grads): (FeatureMatrix, ChebGrads) = match &cache.branch {
        BranchCache::Global { pool1, cheb2, relu2, drop2, pool2 } => {
            let f1_len = 2 * params.conv1.output_channels();
            let (d_p1, d_p2) = d_fc_raw.split_at(f1_len);
            let d_d2 = global_pool_backward(pool2, d_p2);
            let d_a2 = matrix_dropout_backward(drop2, &d_d2);
            let d_z2 = relu_backward(relu2, &d_a2);
            let (dx2, conv2_grads) =
                cheb_backward_cached(&prep.lt, cheb2, &params.conv2, &d_z2, true)?;
            let mut d_d1 = dx2.expect("dx requested");
            d_d1.add_assign(&global_pool_backward(pool1, d_p1));
            (d_d1, conv2_grads)
        }
        BranchCache::Multires { pool1, mp, cheb2, relu2, drop2, pool2 } => {
            let coarse = prep.coarse.as_ref().expect("multires cache without coarse structure");
            let f1_len = 2 * params.conv1.output_channels();
            let (d_p1, d_p2) = if pool1.is_some() {
                let (a, b) = d_fc_raw.split_at(f1_len);
                (Some(a), b)
            } else {
                (None, &d_fc_raw[..])
            };
            let d_d2 = global_pool_backward(pool2, d_p2);
            let d_a2 = matrix_dropout_backward(drop2, &d_d2);
            let d_z2 = relu_backward(relu2, &d_a2);
            let (d_mp, conv2_grads) =
                cheb_backward_cached(&coarse.lt, cheb2, &params.conv2, &d_z2, true)?;
            let mut d_d1 = pool_clusters_backward(mp, &d_mp.expect("dx requested"));
            if let (Some(c1), Some(d_p1)) = (pool1, d_p1) {
                d_d1.add_assign(&global_pool_backward(c1, d_p1));
            }
            (d_d1, conv2_grads)
        }
    };

    let d_a1 = matrix_dropout_backward(&cache.drop1, &d_d1);
    let d_z1 = relu_backward(&cache.relu1, &d_a1);
    let (_, conv1_grads) =
        cheb_backward_cached(&prep.lt, &cache.cheb1, &params.conv1, &d_z1, false)?;

    let mut grads = ModelGrads {
        conv1_theta: conv1_grads.d_theta,
        conv1_bias: conv1_grads.d_bias,
        conv2_theta: conv2_grads.d_theta,
        conv2_bias: conv2_grads.d_bias,
        fc_weight: d_fc_weight,
        fc_bias: d_fc_bias,
    };
    grads.add_weight_decay(params, weight_decay);
    Ok((loss, grads))
}
