//! Training loop, evaluation metrics, stability sweeps, and active-point
//! extraction.
//!
//! Per-cloud geometric structure (graph, Laplacian, cluster plan) is
//! prepared once and shared across epochs. Within a batch, clouds are
//! processed by a fixed round-robin assignment over worker threads, each
//! worker accumulating its gradients locally in visit order and the main
//! thread merging worker sums in worker order: runs are bit-reproducible for
//! a fixed `(seed, threads)` pair, and exactly sequential with one thread.
//!
//! All stochastic streams (shuffles, dropout masks) derive from the master
//! seed plus epoch/cloud indices, never from shared generator state, so a
//! resumed checkpoint continues bit-identically to an uninterrupted run.

use std::sync::Arc;
use std::time::Instant;

use pointgcn_core::data::{batch_indices, Dataset};
use pointgcn_core::model::{
    backward, forward_prepared, init_params, prepare, ModelConfig, ModelGrads, ModelParams,
    PoolingMode, Prepared,
};
use pointgcn_core::nn::{class_weights_from_counts, ClassWeights, Mode};
use pointgcn_core::optim::{adam_step, AdamHyper, AdamState};
use pointgcn_core::pointcloud::PointCloud;
use pointgcn_core::rng::{mix, mix3, rng_from};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::report::{EpochStats, TrainReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: u64, batch: usize },
    #[error(transparent)]
    Core(#[from] pointgcn_core::Error),
}

/// Everything a training run needs besides the data.
#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub model: ModelConfig,
    pub epochs: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Worker threads; 0 picks the available parallelism, 1 is sequential.
    pub threads: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: Checkpoint,
}

/// Accuracy metrics plus the full confusion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Correct over total.
    pub instance_accuracy: f64,
    /// Unweighted mean of per-class recall (classes with instances).
    pub class_accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u32>>,
}

fn effective_threads(requested: usize) -> usize {
    if requested == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        requested
    }
}

/// Map `f` over `0..n` on a fixed round-robin worker assignment, returning
/// results in index order.
fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = effective_threads(threads).min(n.max(1));
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(threads);
        for w in 0..threads {
            let f = &f;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut i = w;
                while i < n {
                    out.push((i, f(i)));
                    i += threads;
                }
                out
            }));
        }
        for handle in handles {
            for (i, value) in handle.join().expect("worker panicked") {
                slots[i] = Some(value);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("missing result")).collect()
}

/// Fold items `0..n` into per-worker accumulators (round-robin order) and
/// merge the accumulators in worker order.
fn parallel_fold<A, I, F>(n: usize, threads: usize, init: I, step: F) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, usize) + Sync,
{
    let threads = effective_threads(threads).min(n.max(1));
    if threads <= 1 {
        let mut acc = init();
        for i in 0..n {
            step(&mut acc, i);
        }
        return vec![acc];
    }
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(threads);
        for w in 0..threads {
            let init = &init;
            let step = &step;
            handles.push(scope.spawn(move || {
                let mut acc = init();
                let mut i = w;
                while i < n {
                    step(&mut acc, i);
                    i += threads;
                }
                acc
            }));
        }
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn validate_sets(
    config: &ModelConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<(Vec<usize>, ClassWeights), TrainError> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(TrainError::Dataset("train and test sets must be non-empty".into()));
    }
    if train_set.class_count() != config.class_count {
        return Err(TrainError::Dataset(format!(
            "model expects {} classes, train set has {}",
            config.class_count,
            train_set.class_count()
        )));
    }
    if test_set.class_count() != config.class_count {
        return Err(TrainError::Dataset(format!(
            "model expects {} classes, test set has {}",
            config.class_count,
            test_set.class_count()
        )));
    }
    let counts = train_set.class_counts()?;
    test_set.class_counts()?;
    let weights = class_weights_from_counts(&counts)?;
    Ok((counts, weights))
}

fn prepare_all(
    dataset: &Dataset,
    config: &ModelConfig,
    threads: usize,
) -> Result<Vec<Arc<Prepared>>, TrainError> {
    let results = parallel_map(dataset.len(), threads, |i| {
        prepare(&dataset.clouds[i], config).map(Arc::new)
    });
    results.into_iter().collect::<Result<_, _>>().map_err(TrainError::Core)
}

/// Confusion-matrix metrics from per-cloud labels and predictions.
pub fn metrics_from_predictions(labels: &[usize], preds: &[usize], classes: usize) -> EvalResult {
    let mut confusion = vec![vec![0u32; classes]; classes];
    for (&t, &p) in labels.iter().zip(preds) {
        confusion[t][p] += 1;
    }
    let total: u32 = labels.len() as u32;
    let correct: u32 = (0..classes).map(|c| confusion[c][c]).sum();
    let mut recall_sum = 0.0f64;
    let mut present = 0usize;
    for c in 0..classes {
        let row: u32 = confusion[c].iter().sum();
        if row > 0 {
            recall_sum += confusion[c][c] as f64 / row as f64;
            present += 1;
        }
    }
    EvalResult {
        instance_accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        class_accuracy: if present > 0 { recall_sum / present as f64 } else { 0.0 },
        confusion,
    }
}

fn eval_prepared(
    params: &ModelParams,
    config: &ModelConfig,
    prepared: &[Arc<Prepared>],
    weights: &ClassWeights,
    threads: usize,
) -> Result<(EvalResult, f64), TrainError> {
    let outcomes = parallel_map(prepared.len(), threads, |i| -> Result<(usize, f64), TrainError> {
        let prep = &prepared[i];
        let mut rng = rng_from(0); // eval mode never draws
        let pass = forward_prepared(prep, params, config, Mode::Eval, &mut rng)?;
        let label = prep.cloud.label.expect("validated labels") as usize;
        let (loss, _) = pointgcn_core::nn::weighted_cross_entropy(&pass.probs, label, weights)?;
        Ok((pass.predicted_class(), loss as f64))
    });
    let mut preds = Vec::with_capacity(prepared.len());
    let mut labels = Vec::with_capacity(prepared.len());
    let mut loss_sum = 0.0f64;
    for (i, o) in outcomes.into_iter().enumerate() {
        let (pred, loss) = o?;
        preds.push(pred);
        labels.push(prepared[i].cloud.label.unwrap() as usize);
        loss_sum += loss;
    }
    let metrics = metrics_from_predictions(&labels, &preds, config.class_count);
    Ok((metrics, loss_sum / prepared.len() as f64))
}

/// Evaluate a model on a labeled dataset.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &Dataset,
    threads: usize,
) -> Result<EvalResult, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Dataset("cannot evaluate an empty dataset".into()));
    }
    if dataset.class_count() != config.class_count {
        return Err(TrainError::Dataset(format!(
            "model expects {} classes, dataset has {}",
            config.class_count,
            dataset.class_count()
        )));
    }
    dataset.class_counts()?;
    let prepared = prepare_all(dataset, config, threads)?;
    let weights = ClassWeights::uniform(config.class_count);
    eval_prepared(params, config, &prepared, &weights, threads).map(|(m, _)| m)
}

struct BatchAcc {
    grads: Option<ModelGrads>,
    loss_sum: f64,
    bad: bool,
}

fn run_epochs(
    settings: &TrainSettings,
    train_set: &Dataset,
    test_set: &Dataset,
    mut params: ModelParams,
    mut adam: AdamState,
    start_epoch: u64,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    let config = &settings.model;
    config.validate()?;
    let (_counts, weights) = validate_sets(config, train_set, test_set)?;
    let threads = settings.threads;
    let train_prep = prepare_all(train_set, config, threads)?;
    let test_prep = prepare_all(test_set, config, threads)?;
    let labels: Vec<usize> =
        train_set.clouds.iter().map(|c| c.label.unwrap() as usize).collect();
    let hyper = AdamHyper::with_lr(settings.lr);
    let seed = settings.seed;

    let mut report = TrainReport::default();
    for epoch in start_epoch..settings.epochs {
        let tick = Instant::now();
        let batches = batch_indices(train_set.len(), settings.batch_size, seed, epoch);
        let mut epoch_loss_sum = 0.0f64;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let worker_accs = parallel_fold(
                batch.len(),
                threads,
                || BatchAcc { grads: None, loss_sum: 0.0, bad: false },
                |acc, pos| {
                    let cloud_idx = batch[pos];
                    let prep = &train_prep[cloud_idx];
                    let mut rng = rng_from(mix3(mix(seed, 0xd307), epoch, cloud_idx as u64));
                    let outcome = forward_prepared(prep, &params, config, Mode::Train, &mut rng)
                        .and_then(|pass| {
                            backward(pass.cache, labels[cloud_idx], &weights, &params, 0.0)
                        });
                    match outcome {
                        Ok((loss, grads)) => {
                            acc.loss_sum += loss as f64;
                            if !loss.is_finite() {
                                acc.bad = true;
                            }
                            match &mut acc.grads {
                                Some(total) => total.add_assign(&grads),
                                None => acc.grads = Some(grads),
                            }
                        }
                        Err(_) => acc.bad = true,
                    }
                },
            );
            let mut total: Option<ModelGrads> = None;
            let mut batch_loss_sum = 0.0f64;
            let mut bad = false;
            for acc in worker_accs {
                bad |= acc.bad;
                batch_loss_sum += acc.loss_sum;
                match (&mut total, acc.grads) {
                    (Some(t), Some(g)) => t.add_assign(&g),
                    (t @ None, Some(g)) => *t = Some(g),
                    _ => {}
                }
            }
            let batch_loss = batch_loss_sum / batch.len() as f64;
            if bad || !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: batch_idx });
            }
            let mut grads = total.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f32);
            grads.add_weight_decay(&params, config.weight_decay);
            adam_step(&mut params, &grads, &mut adam, &hyper)?;
            epoch_loss_sum += batch_loss_sum;
        }

        let (metrics, test_loss) =
            eval_prepared(&params, config, &test_prep, &weights, threads)?;
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss_sum / train_set.len() as f64,
            test_loss,
            instance_accuracy: metrics.instance_accuracy,
            class_accuracy: metrics.class_accuracy,
            seconds: tick.elapsed().as_secs_f64(),
        };
        progress(&stats);
        report.epochs.push(stats);
    }

    let checkpoint = Checkpoint {
        config: config.clone(),
        params,
        adam,
        epoch: settings.epochs,
        seed,
    };
    Ok(TrainOutcome { report, checkpoint })
}

/// Train from fresh Glorot-initialized parameters.
pub fn train(
    settings: &TrainSettings,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(settings, train_set, test_set, |_| {})
}

/// [`train`] with a per-epoch callback (progress printing).
pub fn train_with_progress(
    settings: &TrainSettings,
    train_set: &Dataset,
    test_set: &Dataset,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    let params = init_params(&settings.model, settings.seed);
    let adam = AdamState::new_for(&params);
    run_epochs(settings, train_set, test_set, params, adam, 0, &mut progress)
}

/// Continue a checkpoint up to `settings.epochs` total epochs. The streams
/// are seed-derived, so the continuation matches an uninterrupted run
/// bit for bit (same thread count).
pub fn resume(
    ckpt: Checkpoint,
    settings: &TrainSettings,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome, TrainError> {
    let start = ckpt.epoch;
    let mut settings = settings.clone();
    settings.model = ckpt.config.clone();
    settings.seed = ckpt.seed;
    run_epochs(&settings, train_set, test_set, ckpt.params, ckpt.adam, start, &mut |_| {})
}

/// Per-seed final test accuracy over repeated training runs.
pub struct StabilityReport {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub std_dev: f64,
    pub reports: Vec<TrainReport>,
}

/// Train once per seed and summarize the spread of final test accuracy.
pub fn stability_run(
    settings: &TrainSettings,
    seeds: &[u64],
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<StabilityReport, TrainError> {
    assert!(seeds.len() >= 2, "stability needs at least two seeds");
    let mut accuracies = Vec::with_capacity(seeds.len());
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut s = settings.clone();
        s.seed = seed;
        let outcome = train(&s, train_set, test_set)?;
        let last = outcome.report.epochs.last().expect("at least one epoch");
        accuracies.push(last.instance_accuracy);
        reports.push(outcome.report);
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    Ok(StabilityReport { seeds: seeds.to_vec(), accuracies, mean, std_dev: var.sqrt(), reports })
}

/// One exported active point with its source coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveRow {
    pub layer: u8,
    pub filter: u32,
    pub vertex: u32,
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

/// Eval-mode forward pass exporting, for every filter of every globally
/// pooled layer, the vertex that won the max. Multires second-layer vertices
/// are mapped back to original cloud indices through their centroids.
pub fn active_point_rows(
    params: &ModelParams,
    config: &ModelConfig,
    cloud: &PointCloud,
) -> Result<Vec<ActiveRow>, TrainError> {
    let prep = Arc::new(prepare(cloud, config)?);
    let mut rng = rng_from(0);
    let pass = forward_prepared(&prep, params, config, Mode::Eval, &mut rng)?;
    let rows = pass
        .active
        .iter()
        .map(|a| {
            let vertex = if config.pooling == PoolingMode::Multires && a.layer == 2 {
                let plan = &prep.coarse.as_ref().expect("multires prep").plan;
                plan.centroid_indices[a.vertex as usize] as u32
            } else {
                a.vertex
            };
            let p = cloud.points[vertex as usize];
            ActiveRow { layer: a.layer, filter: a.filter, vertex, x: p.x, y: p.y, z: p.z }
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pointgcn_core::data::synth_generate;
    use pointgcn_core::graph::SigmaPolicy;
    use pointgcn_core::nn::ClusterMode;

    fn tiny_settings(pooling: PoolingMode, epochs: u64) -> TrainSettings {
        TrainSettings {
            model: ModelConfig {
                knn_k: 6,
                cheb_order: 2,
                filters: [12, 12],
                pooling,
                centroid_count: 12,
                cluster_k: 8,
                class_count: 4,
                dropout_keep: [1.0, 1.0],
                weight_decay: 2e-4,
                sigma: SigmaPolicy::MeanSquaredDistance,
                cluster_mode: ClusterMode::Neighbors,
                concat_layer1_stats: false,
                use_bias: true,
            },
            epochs,
            lr: 1e-3,
            batch_size: 8,
            seed: 7,
            threads: 1,
        }
    }

    fn tiny_data(per_class: usize, points: usize, seed: u64) -> Dataset {
        synth_generate(per_class, points, 0.02, seed).unwrap()
    }

    #[test]
    fn one_epoch_smoke() {
        let train_set = tiny_data(2, 48, 1);
        let test_set = tiny_data(1, 48, 2);
        let settings = tiny_settings(PoolingMode::Global, 1);
        let outcome = train(&settings, &train_set, &test_set).unwrap();
        assert_eq!(outcome.report.epochs.len(), 1);
        let e = &outcome.report.epochs[0];
        assert!(e.train_loss.is_finite() && e.test_loss.is_finite());
        assert!(e.instance_accuracy >= 0.0 && e.instance_accuracy <= 1.0);
        assert_eq!(outcome.checkpoint.epoch, 1);
    }

    #[test]
    fn same_seed_reproduces_report() {
        let train_set = tiny_data(2, 48, 3);
        let test_set = tiny_data(1, 48, 4);
        let settings = tiny_settings(PoolingMode::Global, 2);
        let a = train(&settings, &train_set, &test_set).unwrap();
        let b = train(&settings, &train_set, &test_set).unwrap();
        for (x, y) in a.report.epochs.iter().zip(&b.report.epochs) {
            assert_eq!(x.train_loss, y.train_loss);
            assert_eq!(x.test_loss, y.test_loss);
        }
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }

    #[test]
    fn overfits_eight_clouds() {
        // A correct implementation must memorize a tiny training set.
        let train_set = tiny_data(2, 48, 5);
        assert_eq!(train_set.len(), 8);
        let mut settings = tiny_settings(PoolingMode::Global, 200);
        settings.lr = 5e-3;
        settings.batch_size = 8;
        let outcome = train(&settings, &train_set, &train_set).unwrap();
        let reached = outcome
            .report
            .epochs
            .iter()
            .any(|e| e.instance_accuracy == 1.0);
        assert!(reached, "never reached 100% train accuracy within 200 epochs");
    }

    #[test]
    fn resume_equals_uninterrupted() {
        let train_set = tiny_data(2, 48, 6);
        let test_set = tiny_data(1, 48, 7);
        let four = tiny_settings(PoolingMode::Global, 4);
        let continuous = train(&four, &train_set, &test_set).unwrap();

        let two = tiny_settings(PoolingMode::Global, 2);
        let first = train(&two, &train_set, &test_set).unwrap();
        let resumed = resume(first.checkpoint, &four, &train_set, &test_set).unwrap();
        assert_eq!(resumed.checkpoint.epoch, 4);
        assert_eq!(continuous.checkpoint.params, resumed.checkpoint.params);
        assert_eq!(continuous.checkpoint.adam, resumed.checkpoint.adam);
    }

    #[test]
    fn balanced_weights_match_unweighted_exactly() {
        let counts = [5usize, 5, 5, 5];
        let weights = class_weights_from_counts(&counts).unwrap();
        assert_eq!(weights.as_slice(), ClassWeights::uniform(4).as_slice());
    }

    #[test]
    fn metrics_hand_case() {
        // Classes sized [10, 30] with recalls [1.0, 0.5]:
        // instance = 25/40, class = 0.75.
        let mut labels = vec![0usize; 10];
        labels.extend(vec![1usize; 30]);
        let mut preds = vec![0usize; 10];
        preds.extend(vec![1usize; 15]);
        preds.extend(vec![0usize; 15]);
        let m = metrics_from_predictions(&labels, &preds, 2);
        assert!((m.instance_accuracy - 0.625).abs() < 1e-12);
        assert!((m.class_accuracy - 0.75).abs() < 1e-12);
        assert_eq!(m.confusion, vec![vec![10, 0], vec![15, 15]]);
        let total: u32 = m.confusion.iter().flatten().sum();
        assert_eq!(total as usize, labels.len());
    }

    #[test]
    fn perfect_predictions_metrics() {
        let labels = vec![0, 1, 2, 2];
        let m = metrics_from_predictions(&labels, &labels, 3);
        assert_eq!(m.instance_accuracy, 1.0);
        assert_eq!(m.class_accuracy, 1.0);
        for (i, row) in m.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v > 0, i == j && labels.contains(&i));
            }
        }
    }

    #[test]
    fn evaluate_checks_class_count() {
        let data = tiny_data(1, 48, 8);
        let settings = tiny_settings(PoolingMode::Global, 1);
        let params = init_params(&settings.model, 0);
        let mut bad_config = settings.model.clone();
        bad_config.class_count = 7;
        assert!(matches!(
            evaluate(&params, &bad_config, &data, 1),
            Err(TrainError::Dataset(_))
        ));
    }

    #[test]
    fn stability_identical_seeds_zero_std() {
        let train_set = tiny_data(2, 48, 9);
        let test_set = tiny_data(1, 48, 10);
        let settings = tiny_settings(PoolingMode::Global, 1);
        let report = stability_run(&settings, &[3, 3], &train_set, &test_set).unwrap();
        assert_eq!(report.accuracies.len(), 2);
        assert_eq!(report.std_dev, 0.0);
        assert_eq!(report.reports.len(), 2);
    }

    #[test]
    fn parallel_matches_sequential_accuracy() {
        let train_set = tiny_data(2, 48, 11);
        let test_set = tiny_data(1, 48, 12);
        let mut settings = tiny_settings(PoolingMode::Multires, 2);
        settings.model.centroid_count = 16;
        settings.model.cluster_k = 6;
        let seq = train(&settings, &train_set, &test_set).unwrap();
        settings.threads = 3;
        let par = train(&settings, &train_set, &test_set).unwrap();
        // Different reduction order: equal within float slack, not bitwise.
        let a = seq.report.epochs.last().unwrap();
        let b = par.report.epochs.last().unwrap();
        assert!((a.test_loss - b.test_loss).abs() < 1e-3);
        assert!((a.instance_accuracy - b.instance_accuracy).abs() < 0.005 + 1e-12);
    }

    #[test]
    fn active_rows_reference_input_coordinates() {
        let data = tiny_data(1, 64, 13);
        let mut settings = tiny_settings(PoolingMode::Multires, 1);
        settings.model.centroid_count = 16;
        settings.model.cluster_k = 6;
        let params = init_params(&settings.model, 3);
        let cloud = &data.clouds[0];
        let rows = active_point_rows(&params, &settings.model, cloud).unwrap();
        assert_eq!(rows.len(), 12, "one row per filter of the pooled layer");
        for r in &rows {
            let p = cloud.points[r.vertex as usize];
            assert_eq!((p.x, p.y, p.z), (r.x, r.y, r.z));
        }
    }

    #[test]
    fn diverged_loss_reports_batch() {
        let train_set = tiny_data(1, 48, 14);
        let test_set = tiny_data(1, 48, 15);
        let mut settings = tiny_settings(PoolingMode::Global, 2);
        settings.lr = f64::NAN;
        let err = train(&settings, &train_set, &test_set);
        // A NaN learning rate poisons the parameters at the first update;
        // the next batch's loss is then non-finite and training must abort.
        match err {
            Err(TrainError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
