//! `key = value` configuration text: parsing, and the canonical encoding of
//! a [`ModelConfig`] used both by the `--config` file and inside checkpoint
//! headers. Lines starting with `#` (or trailing `# ...`) are comments.
//! Unknown keys are rejected, not ignored.

use std::collections::BTreeMap;

use pointgcn_core::graph::SigmaPolicy;
use pointgcn_core::model::{ModelConfig, PoolingMode};
use pointgcn_core::nn::ClusterMode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{content}`")]
    Malformed { line: usize, content: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: invalid value `{value}`")]
    BadValue { key: String, value: String },
    #[error("missing key `{0}`")]
    Missing(String),
}

/// Parsed key/value pairs, insertion-order independent.
pub type KvMap = BTreeMap<String, String>;

pub fn parse_kv(text: &str) -> Result<KvMap, ConfigError> {
    let mut map = KvMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Malformed { line, content: content.to_string() })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Malformed { line, content: content.to_string() });
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(ConfigError::Duplicate { line, key });
        }
    }
    Ok(map)
}

fn bad(key: &str, value: &str) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), value: value.to_string() }
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| bad(key, value))
}

fn require<'a>(map: &'a KvMap, key: &str) -> Result<&'a str, ConfigError> {
    map.get(key).map(String::as_str).ok_or_else(|| ConfigError::Missing(key.to_string()))
}

pub fn pooling_from_str(key: &str, s: &str) -> Result<PoolingMode, ConfigError> {
    match s {
        "global" => Ok(PoolingMode::Global),
        "multires" => Ok(PoolingMode::Multires),
        _ => Err(bad(key, s)),
    }
}

pub fn parse_filters(key: &str, s: &str) -> Result<[usize; 2], ConfigError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(bad(key, s));
    }
    Ok([parse_value(key, parts[0])?, parse_value(key, parts[1])?])
}

/// Keys understood inside a serialized model configuration.
pub const MODEL_KEYS: [&str; 14] = [
    "knn", "order", "filters", "pooling", "centroids", "cluster_k", "classes", "keep_conv",
    "keep_fc", "weight_decay", "sigma", "cluster_mode", "concat_layer1", "use_bias",
];

pub fn model_config_to_text(config: &ModelConfig) -> String {
    let pooling = match config.pooling {
        PoolingMode::Global => "global",
        PoolingMode::Multires => "multires",
    };
    let sigma = match config.sigma {
        SigmaPolicy::MeanSquaredDistance => "mean".to_string(),
        SigmaPolicy::Fixed(v) => format!("fixed:{v}"),
    };
    let cluster_mode = match config.cluster_mode {
        ClusterMode::Neighbors => "neighbors",
        ClusterMode::Partition => "partition",
    };
    format!(
        "knn = {}\norder = {}\nfilters = {},{}\npooling = {}\ncentroids = {}\ncluster_k = {}\n\
         classes = {}\nkeep_conv = {}\nkeep_fc = {}\nweight_decay = {}\nsigma = {}\n\
         cluster_mode = {}\nconcat_layer1 = {}\nuse_bias = {}\n",
        config.knn_k,
        config.cheb_order,
        config.filters[0],
        config.filters[1],
        pooling,
        config.centroid_count,
        config.cluster_k,
        config.class_count,
        config.dropout_keep[0],
        config.dropout_keep[1],
        config.weight_decay,
        sigma,
        cluster_mode,
        config.concat_layer1_stats,
        config.use_bias,
    )
}

/// Rebuild a model configuration from parsed keys; extra keys are the
/// caller's concern.
pub fn model_config_from_kv(map: &KvMap) -> Result<ModelConfig, ConfigError> {
    let sigma_text = require(map, "sigma")?;
    let sigma = if sigma_text == "mean" {
        SigmaPolicy::MeanSquaredDistance
    } else if let Some(v) = sigma_text.strip_prefix("fixed:") {
        SigmaPolicy::Fixed(parse_value("sigma", v)?)
    } else {
        return Err(bad("sigma", sigma_text));
    };
    let cluster_mode = match require(map, "cluster_mode")? {
        "neighbors" => ClusterMode::Neighbors,
        "partition" => ClusterMode::Partition,
        other => return Err(bad("cluster_mode", other)),
    };
    Ok(ModelConfig {
        knn_k: parse_value("knn", require(map, "knn")?)?,
        cheb_order: parse_value("order", require(map, "order")?)?,
        filters: parse_filters("filters", require(map, "filters")?)?,
        pooling: pooling_from_str("pooling", require(map, "pooling")?)?,
        centroid_count: parse_value("centroids", require(map, "centroids")?)?,
        cluster_k: parse_value("cluster_k", require(map, "cluster_k")?)?,
        class_count: parse_value("classes", require(map, "classes")?)?,
        dropout_keep: [
            parse_value("keep_conv", require(map, "keep_conv")?)?,
            parse_value("keep_fc", require(map, "keep_fc")?)?,
        ],
        weight_decay: parse_value("weight_decay", require(map, "weight_decay")?)?,
        sigma,
        cluster_mode,
        concat_layer1_stats: parse_value("concat_layer1", require(map, "concat_layer1")?)?,
        use_bias: parse_value("use_bias", require(map, "use_bias")?)?,
    })
}
