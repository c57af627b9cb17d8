//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 runtime/data error.
//! Every command is deterministic given its flags; all randomness flows from
//! the explicit `--seed`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pointgcn_core::data::{synth_generate_classes, preprocess_mesh, Dataset};
use pointgcn_core::graph::SigmaPolicy;
use pointgcn_core::model::ModelConfig;
use pointgcn_core::nn::ClusterMode;
use pointgcn_core::rng::mix;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{parse_filters, parse_kv, pooling_from_str, KvMap};
use crate::off::read_off;
use crate::pack::{read_packed, write_packed};
use crate::report::{write_active_points_csv, write_report_csv};
use crate::train::{
    active_point_rows, evaluate, train_with_progress, EvalResult, TrainSettings,
};

/// Errors mapped to process exit codes.
#[derive(Debug)]
pub enum CmdError {
    /// Bad flags or configuration: exit code 1.
    Usage(String),
    /// Runtime or data failure: exit code 2.
    Runtime(anyhow::Error),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Usage(msg) => write!(f, "{msg}"),
            CmdError::Runtime(err) => write!(f, "{err:#}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

fn runtime(err: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Runtime(err.into())
}

#[derive(Parser, Debug)]
#[command(
    name = "pointgcn",
    about = "Graph-convolutional point cloud classifier",
    version,
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a packed synthetic dataset of primitive shapes.
    Synth(SynthArgs),
    /// Convert an OFF directory tree (class/split/file.off) to packed files.
    Preprocess(PreprocessArgs),
    /// Train a model and write a checkpoint plus a report CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a packed dataset.
    Eval(EvalArgs),
    /// Export active points (per-filter argmax vertices) for one cloud.
    Active(ActiveArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of primitive classes to generate (1-4: sphere, cube, cylinder, torus).
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Instances per class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Points per cloud.
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    /// Gaussian coordinate noise before normalization.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output packed dataset path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Root directory holding <class>/<train|test>/<file>.off.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for train.pgc / test.pgc.
    #[arg(long)]
    pub out: PathBuf,
    /// Points kept per object after farthest subsampling.
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    /// Surface samples drawn from each mesh before subsampling.
    #[arg(long, default_value_t = 2048)]
    pub sample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Optional `key = value` config file; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Packed training dataset.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Packed test dataset.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Pooling branch: global or multires.
    #[arg(long)]
    pub pooling: Option<String>,
    /// Graph neighbors.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Chebyshev polynomial order.
    #[arg(long)]
    pub order: Option<usize>,
    /// Filters of both conv layers, e.g. 1000,1000.
    #[arg(long)]
    pub filters: Option<String>,
    /// Centroids kept by multi-resolution pooling.
    #[arg(long)]
    pub centroids: Option<usize>,
    /// Cluster size around each centroid.
    #[arg(long)]
    pub cluster_k: Option<usize>,
    /// Cluster construction: neighbors (overlapping) or partition.
    #[arg(long)]
    pub cluster_mode: Option<String>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// l2 penalty coefficient.
    #[arg(long)]
    pub weight_decay: Option<f32>,
    /// Keep probability after each conv layer.
    #[arg(long)]
    pub keep_conv: Option<f32>,
    /// Keep probability on the classifier input.
    #[arg(long)]
    pub keep_fc: Option<f32>,
    /// Fixed Gaussian kernel width sigma^2 (default: adaptive mean).
    #[arg(long)]
    pub fixed_sigma: Option<f64>,
    /// Multires branch: concatenate layer-1 global statistics too.
    #[arg(long)]
    pub concat_layer1: Option<bool>,
    /// Per-channel bias after each Chebyshev sum.
    #[arg(long)]
    pub use_bias: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 = all cores, 1 = bit-reproducible sequential.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out_checkpoint: Option<PathBuf>,
    /// Report CSV output path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Packed dataset to evaluate.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct ActiveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Packed dataset the cloud is drawn from.
    #[arg(long)]
    pub data: PathBuf,
    /// Cloud index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Active(args) => cmd_active(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CmdError> {
    if args.per_class == 0 || args.points == 0 {
        return Err(usage("--per-class and --points must be positive"));
    }
    if args.classes == 0 || args.classes > 4 {
        return Err(usage("--classes must lie in 1..=4"));
    }
    let dataset =
        synth_generate_classes(args.classes, args.per_class, args.points, args.noise, args.seed)
            .map_err(|e| usage(e.to_string()))?;
    write_packed(&args.out, &dataset).map_err(runtime)?;
    println!(
        "wrote {} clouds ({} classes, {} points each) to {}",
        dataset.len(),
        dataset.class_count(),
        args.points,
        args.out.display()
    );
    Ok(())
}

fn list_off_files(dir: &Path) -> Result<Vec<PathBuf>, CmdError> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(runtime)? {
        let path = entry.map_err(runtime)?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), CmdError> {
    if args.points == 0 || args.sample < args.points {
        return Err(usage("--sample must be at least --points, both positive"));
    }
    if !args.input.is_dir() {
        return Err(runtime(anyhow::anyhow!(
            "input directory {} does not exist",
            args.input.display()
        )));
    }
    let mut class_names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(&args.input).map_err(runtime)? {
        let path = entry.map_err(runtime)?.path();
        if path.is_dir() {
            class_names.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    class_names.sort();
    if class_names.is_empty() {
        return Err(runtime(anyhow::anyhow!("no class directories under {}", args.input.display())));
    }

    std::fs::create_dir_all(&args.out).map_err(runtime)?;
    let mut failures = 0usize;
    let mut object_index = 0u64;
    for split in ["train", "test"] {
        let mut clouds = Vec::new();
        for (label, class) in class_names.iter().enumerate() {
            let dir = args.input.join(class).join(split);
            if !dir.is_dir() {
                continue;
            }
            for file in list_off_files(&dir)? {
                object_index += 1;
                let per_object_seed = mix(args.seed, object_index);
                let result = read_off(&file).map_err(anyhow::Error::from).and_then(|mesh| {
                    preprocess_mesh(&mesh, args.sample, args.points, per_object_seed)
                        .map_err(anyhow::Error::from)
                });
                match result {
                    Ok(mut cloud) => {
                        cloud.label = Some(label as u16);
                        clouds.push(cloud);
                    }
                    Err(err) => {
                        failures += 1;
                        eprintln!("{}: {err:#}", file.display());
                    }
                }
            }
        }
        let dataset = Dataset { clouds, class_names: class_names.clone() };
        let out = args.out.join(format!("{split}.pgc"));
        write_packed(&out, &dataset).map_err(runtime)?;
        println!("wrote {} clouds to {}", dataset.len(), out.display());
    }
    if failures > 0 {
        Err(runtime(anyhow::anyhow!("{failures} file(s) failed to convert")))
    } else {
        Ok(())
    }
}

/// Keys accepted in a train config file (flag names without dashes).
const TRAIN_KEYS: [&str; 22] = [
    "train", "test", "pooling", "knn", "order", "filters", "centroids", "cluster_k",
    "cluster_mode", "batch", "epochs", "lr", "weight_decay", "keep_conv", "keep_fc",
    "fixed_sigma", "concat_layer1", "use_bias", "seed", "threads", "out_checkpoint", "report",
];

fn merge<T, F>(cli: Option<T>, file: Option<&String>, key: &str, parse: F, default: T) -> Result<T, CmdError>
where
    F: Fn(&str) -> Result<T, CmdError>,
{
    if let Some(v) = cli {
        return Ok(v);
    }
    match file {
        Some(raw) => parse(raw).map_err(|_| usage(format!("config key `{key}`: invalid value `{raw}`"))),
        None => Ok(default),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CmdError> {
    let file_map: KvMap = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(runtime)?;
            let map = parse_kv(&text).map_err(|e| usage(e.to_string()))?;
            for key in map.keys() {
                if !TRAIN_KEYS.contains(&key.as_str()) {
                    return Err(usage(format!("config file: unknown key `{key}`")));
                }
            }
            map
        }
        None => KvMap::new(),
    };
    let file = |key: &str| file_map.get(key);

    let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| usage(e.to_string()));
    let parse_u64 = |s: &str| s.parse::<u64>().map_err(|e| usage(e.to_string()));
    let parse_f32 = |s: &str| s.parse::<f32>().map_err(|e| usage(e.to_string()));
    let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| usage(e.to_string()));
    let parse_bool = |s: &str| s.parse::<bool>().map_err(|e| usage(e.to_string()));
    let parse_path = |s: &str| Ok(PathBuf::from(s));

    let train_path = merge(args.train, file("train"), "train", parse_path, PathBuf::new())?;
    let test_path = merge(args.test, file("test"), "test", parse_path, PathBuf::new())?;
    if train_path.as_os_str().is_empty() || test_path.as_os_str().is_empty() {
        return Err(usage("--train and --test packed datasets are required"));
    }

    let pooling_text =
        merge(args.pooling, file("pooling"), "pooling", |s| Ok(s.to_string()), "global".into())?;
    let pooling =
        pooling_from_str("pooling", &pooling_text).map_err(|e| usage(e.to_string()))?;
    let filters_text =
        merge(args.filters, file("filters"), "filters", |s| Ok(s.to_string()), "1000,1000".into())?;
    let filters = parse_filters("filters", &filters_text).map_err(|e| usage(e.to_string()))?;
    let cluster_mode = match merge(
        args.cluster_mode,
        file("cluster_mode"),
        "cluster_mode",
        |s| Ok(s.to_string()),
        "neighbors".into(),
    )?
    .as_str()
    {
        "neighbors" => ClusterMode::Neighbors,
        "partition" => ClusterMode::Partition,
        other => return Err(usage(format!("--cluster-mode must be neighbors or partition, got {other}"))),
    };
    let sigma = match (args.fixed_sigma, file("fixed_sigma")) {
        (Some(v), _) => SigmaPolicy::Fixed(v),
        (None, Some(raw)) => SigmaPolicy::Fixed(parse_f64(raw)?),
        (None, None) => SigmaPolicy::MeanSquaredDistance,
    };

    let train_set = read_packed(&train_path).map_err(runtime)?;
    let test_set = read_packed(&test_path).map_err(runtime)?;

    let model = ModelConfig {
        knn_k: merge(args.knn, file("knn"), "knn", parse_usize, 40)?,
        cheb_order: merge(args.order, file("order"), "order", parse_usize, 3)?,
        filters,
        pooling,
        centroid_count: merge(args.centroids, file("centroids"), "centroids", parse_usize, 55)?,
        cluster_k: merge(args.cluster_k, file("cluster_k"), "cluster_k", parse_usize, 50)?,
        class_count: train_set.class_count(),
        dropout_keep: [
            merge(args.keep_conv, file("keep_conv"), "keep_conv", parse_f32, 0.9)?,
            merge(args.keep_fc, file("keep_fc"), "keep_fc", parse_f32, 0.5)?,
        ],
        weight_decay: merge(args.weight_decay, file("weight_decay"), "weight_decay", parse_f32, 2e-4)?,
        sigma,
        cluster_mode,
        concat_layer1_stats: merge(args.concat_layer1, file("concat_layer1"), "concat_layer1", parse_bool, false)?,
        use_bias: merge(args.use_bias, file("use_bias"), "use_bias", parse_bool, true)?,
    };
    model.validate().map_err(|e| usage(e.to_string()))?;

    let settings = TrainSettings {
        model,
        epochs: merge(args.epochs, file("epochs"), "epochs", parse_u64, 100)?,
        lr: merge(args.lr, file("lr"), "lr", parse_f64, 1e-3)?,
        batch_size: merge(args.batch, file("batch"), "batch", parse_usize, 28)?,
        seed: merge(args.seed, file("seed"), "seed", parse_u64, 0)?,
        threads: merge(args.threads, file("threads"), "threads", parse_usize, 0)?,
    };
    if settings.batch_size == 0 || settings.epochs == 0 {
        return Err(usage("--batch and --epochs must be positive"));
    }
    let out_checkpoint = merge(
        args.out_checkpoint,
        file("out_checkpoint"),
        "out_checkpoint",
        parse_path,
        PathBuf::from("pointgcn.pgck"),
    )?;
    let report_path =
        merge(args.report, file("report"), "report", parse_path, PathBuf::from("report.csv"))?;

    let outcome = train_with_progress(&settings, &train_set, &test_set, |e| {
        println!(
            "epoch {:>4}: train_loss {:.4}  test_loss {:.4}  inst_acc {:.4}  class_acc {:.4}  ({:.1}s)",
            e.epoch, e.train_loss, e.test_loss, e.instance_accuracy, e.class_accuracy, e.seconds
        );
    })
    .map_err(runtime)?;

    save_checkpoint(&out_checkpoint, &outcome.checkpoint).map_err(runtime)?;
    write_report_csv(&report_path, &outcome.report).map_err(runtime)?;
    let last = outcome.report.epochs.last().expect("epochs ran");
    println!(
        "final: test_loss {:.4}  inst_acc {:.4}  class_acc {:.4}",
        last.test_loss, last.instance_accuracy, last.class_accuracy
    );
    println!("checkpoint: {}", out_checkpoint.display());
    println!("report: {}", report_path.display());
    Ok(())
}

fn load_checkpoint_and_data(
    checkpoint: &Path,
    data: &Path,
) -> Result<(Checkpoint, Dataset), CmdError> {
    let ckpt = load_checkpoint(checkpoint).map_err(runtime)?;
    let dataset = read_packed(data).map_err(runtime)?;
    if dataset.class_count() != ckpt.config.class_count {
        return Err(runtime(anyhow::anyhow!(
            "class_count mismatch: checkpoint expects {}, dataset has {}",
            ckpt.config.class_count,
            dataset.class_count()
        )));
    }
    Ok((ckpt, dataset))
}

fn print_eval(result: &EvalResult, class_names: &[String]) {
    println!("instance accuracy: {:.4}", result.instance_accuracy);
    println!("class accuracy:    {:.4}", result.class_accuracy);
    println!("confusion (rows = true class, columns = predicted):");
    for (name, row) in class_names.iter().zip(&result.confusion) {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        println!("  {name:<12} {}", cells.join(" "));
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), CmdError> {
    let (ckpt, dataset) = load_checkpoint_and_data(&args.checkpoint, &args.data)?;
    let result =
        evaluate(&ckpt.params, &ckpt.config, &dataset, args.threads).map_err(runtime)?;
    print_eval(&result, &dataset.class_names);
    Ok(())
}

fn cmd_active(args: ActiveArgs) -> Result<(), CmdError> {
    let (ckpt, dataset) = load_checkpoint_and_data(&args.checkpoint, &args.data)?;
    if args.index >= dataset.len() {
        return Err(runtime(anyhow::anyhow!(
            "--index {} out of range: dataset has {} clouds",
            args.index,
            dataset.len()
        )));
    }
    let rows = active_point_rows(&ckpt.params, &ckpt.config, &dataset.clouds[args.index])
        .map_err(runtime)?;
    write_active_points_csv(&args.out, &rows).map_err(runtime)?;
    println!("wrote {} active points to {}", rows.len(), args.out.display());
    Ok(())
}
