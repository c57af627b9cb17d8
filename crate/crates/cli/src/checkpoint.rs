//! Checkpoint container: model configuration, trainable tensors, optimizer
//! state, and the training position, restartable bit for bit.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "PGCK" | u32 version = 1
//! | u32 config text length, UTF-8 `key = value` lines
//! | u32 tensor count
//! | per tensor: u16 name length, name, u8 rank, rank x u32 dims, f32 data
//! | u32 CRC32 of all preceding bytes
//! ```
//!
//! The config text carries the model configuration plus `epoch`, `seed`, and
//! `adam_step`; every stochastic stream in training derives from `seed` and
//! the epoch/cloud indices, so these scalars fully capture the RNG position.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};
use pointgcn_core::chebfilter::ChebFilterBank;
use pointgcn_core::linalg::FeatureMatrix;
use pointgcn_core::model::{ModelConfig, ModelParams};
use pointgcn_core::optim::AdamState;
use thiserror::Error;

use crate::config::{model_config_from_kv, model_config_to_text, parse_kv, parse_value};

pub const MAGIC: &[u8; 4] = b"PGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected PGCK")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("file truncated or trailing garbage")]
    Truncated,
    #[error("config block: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("tensor `{name}`: expected {expected} values, found {actual}")]
    TensorShape { name: String, expected: usize, actual: usize },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A restartable training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: u64,
    /// Master seed every training stream derives from.
    pub seed: u64,
}

struct NamedTensor<'a> {
    name: String,
    dims: Vec<u32>,
    data: &'a [f32],
}

fn tensor_list<'a>(params: &'a ModelParams, config: &ModelConfig) -> Vec<NamedTensor<'a>> {
    let k1 = (config.cheb_order + 1) as u32;
    let [f1, f2] = [config.filters[0] as u32, config.filters[1] as u32];
    let fc_dim = config.fc_input_dim() as u32;
    let classes = config.class_count as u32;
    let mut out = vec![NamedTensor {
        name: "conv1.theta".into(),
        dims: vec![k1, 3, f1],
        data: &params.conv1.theta,
    }];
    if let Some(b) = &params.conv1.bias {
        out.push(NamedTensor { name: "conv1.bias".into(), dims: vec![f1], data: b });
    }
    out.push(NamedTensor {
        name: "conv2.theta".into(),
        dims: vec![k1, f1, f2],
        data: &params.conv2.theta,
    });
    if let Some(b) = &params.conv2.bias {
        out.push(NamedTensor { name: "conv2.bias".into(), dims: vec![f2], data: b });
    }
    out.push(NamedTensor {
        name: "fc.weight".into(),
        dims: vec![classes, fc_dim],
        data: params.fc_weight.as_slice(),
    });
    out.push(NamedTensor { name: "fc.bias".into(), dims: vec![classes], data: &params.fc_bias });
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut config_text = model_config_to_text(&ckpt.config);
    config_text.push_str(&format!(
        "epoch = {}\nseed = {}\nadam_step = {}\n",
        ckpt.epoch, ckpt.seed, ckpt.adam.t
    ));

    let mut tensors = tensor_list(&ckpt.params, &ckpt.config);
    // Adam moments mirror the parameter tensor list.
    let names: Vec<String> = tensors.iter().map(|t| t.name.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        tensors.push(NamedTensor {
            name: format!("adam.m.{name}"),
            dims: vec![ckpt.adam.m[i].len() as u32],
            data: &ckpt.adam.m[i],
        });
        tensors.push(NamedTensor {
            name: format!("adam.v.{name}"),
            dims: vec![ckpt.adam.v[i].len() as u32],
            data: &ckpt.adam.v[i],
        });
    }

    let mut hasher = crc32fast::Hasher::new();
    let mut file = BufWriter::new(File::create(path)?);
    let mut write = |buf: &[u8], file: &mut BufWriter<File>| -> std::io::Result<()> {
        hasher.update(buf);
        file.write_all(buf)
    };
    write(MAGIC, &mut file)?;
    write(&VERSION.to_le_bytes(), &mut file)?;
    write(&(config_text.len() as u32).to_le_bytes(), &mut file)?;
    write(config_text.as_bytes(), &mut file)?;
    write(&(tensors.len() as u32).to_le_bytes(), &mut file)?;
    for t in &tensors {
        write(&(t.name.len() as u16).to_le_bytes(), &mut file)?;
        write(t.name.as_bytes(), &mut file)?;
        write(&[t.dims.len() as u8], &mut file)?;
        for &d in &t.dims {
            write(&d.to_le_bytes(), &mut file)?;
        }
        for &v in t.data {
            write(&v.to_le_bytes(), &mut file)?;
        }
    }
    let crc = hasher.finalize();
    file.write_all(&crc.to_le_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut r = &body[4..];
    let version = r.read_u32::<LittleEndian>().map_err(|_| CheckpointError::Truncated)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let text_len = r.read_u32::<LittleEndian>().map_err(|_| CheckpointError::Truncated)? as usize;
    if r.len() < text_len {
        return Err(CheckpointError::Truncated);
    }
    let (text, rest) = r.split_at(text_len);
    r = rest;
    let text = std::str::from_utf8(text).map_err(|_| CheckpointError::Truncated)?;
    let mut kv = parse_kv(text)?;
    let epoch: u64 = parse_value("epoch", &kv.remove("epoch").ok_or(CheckpointError::Truncated)?)?;
    let seed: u64 = parse_value("seed", &kv.remove("seed").ok_or(CheckpointError::Truncated)?)?;
    let adam_step: u64 =
        parse_value("adam_step", &kv.remove("adam_step").ok_or(CheckpointError::Truncated)?)?;
    let config = model_config_from_kv(&kv)?;

    let tensor_count = r.read_u32::<LittleEndian>().map_err(|_| CheckpointError::Truncated)? as usize;
    let mut tensors: Vec<(String, Vec<u32>, Vec<f32>)> = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = r.read_u16::<LittleEndian>().map_err(|_| CheckpointError::Truncated)? as usize;
        if r.len() < name_len {
            return Err(CheckpointError::Truncated);
        }
        let (name, rest) = r.split_at(name_len);
        r = rest;
        let name = String::from_utf8(name.to_vec()).map_err(|_| CheckpointError::Truncated)?;
        let rank = r.read_u8().map_err(|_| CheckpointError::Truncated)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LittleEndian>().map_err(|_| CheckpointError::Truncated)?);
        }
        let len: usize = dims.iter().map(|&d| d as usize).product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.read_f32::<LittleEndian>().map_err(|_| CheckpointError::Truncated)?);
        }
        tensors.push((name, dims, data));
    }
    if !r.is_empty() {
        return Err(CheckpointError::Truncated);
    }

    let mut take = |name: &str, expected: usize| -> Result<Vec<f32>, CheckpointError> {
        let pos = tensors
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        let (_, _, data) = tensors.remove(pos);
        if data.len() != expected {
            return Err(CheckpointError::TensorShape {
                name: name.to_string(),
                expected,
                actual: data.len(),
            });
        }
        Ok(data)
    };

    let k1 = config.cheb_order + 1;
    let [f1, f2] = config.filters;
    let fc_dim = config.fc_input_dim();
    let classes = config.class_count;
    let conv1_theta = take("conv1.theta", k1 * 3 * f1)?;
    let conv1_bias = if config.use_bias { Some(take("conv1.bias", f1)?) } else { None };
    let conv2_theta = take("conv2.theta", k1 * f1 * f2)?;
    let conv2_bias = if config.use_bias { Some(take("conv2.bias", f2)?) } else { None };
    let fc_weight =
        FeatureMatrix::from_vec(classes, fc_dim, take("fc.weight", classes * fc_dim)?);
    let fc_bias = take("fc.bias", classes)?;
    let params = ModelParams {
        conv1: ChebFilterBank::from_theta(config.cheb_order, 3, f1, conv1_theta, conv1_bias),
        conv2: ChebFilterBank::from_theta(config.cheb_order, f1, f2, conv2_theta, conv2_bias),
        fc_weight,
        fc_bias,
    };

    let param_names: Vec<String> =
        tensor_list(&params, &config).iter().map(|t| t.name.clone()).collect();
    let mut m = Vec::with_capacity(param_names.len());
    let mut v = Vec::with_capacity(param_names.len());
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (name, &size) in param_names.iter().zip(&sizes) {
        m.push(take(&format!("adam.m.{name}"), size)?);
        v.push(take(&format!("adam.v.{name}"), size)?);
    }
    let adam = AdamState { m, v, t: adam_step };

    Ok(Checkpoint { config, params, adam, epoch, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pointgcn_core::model::init_params;
    use tempfile::tempdir;

    fn sample_checkpoint() -> Checkpoint {
        let mut config = ModelConfig::with_classes(3);
        config.filters = [6, 5];
        config.knn_k = 4;
        let params = init_params(&config, 11);
        let mut adam = AdamState::new_for(&params);
        adam.t = 17;
        adam.m[0][0] = 0.25;
        adam.v[2][3] = 1.5;
        Checkpoint { config, params, adam, epoch: 9, seed: 12345 }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.pgck");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
        for (a, b) in ckpt.params.tensors().iter().zip(back.params.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_file_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.pgck");
        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn magic_checked() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.pgck");
        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[2] = b'!';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn truncation_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.pgck");
        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
