//! Packed point-cloud dataset container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "PGC1" | u32 version = 1 | u32 cloud count N | u32 point count n
//! | u32 class count C | C x (u16 length, UTF-8 class name)
//! | N x (u16 label, n x 3 x f32 coordinates)
//! | u32 CRC32 of all preceding bytes
//! ```
//!
//! Every cloud must carry the same point count and a label below C. The
//! round trip is bitwise lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use pointgcn_core::data::Dataset;
use pointgcn_core::pointcloud::{Point3, PointCloud};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PGC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("bad magic: expected PGC1")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("cloud {index} has {points} points, expected {expected}")]
    NonUniformPointCount { index: usize, points: usize, expected: usize },
    #[error("cloud {index} is unlabeled or out of range for {classes} classes")]
    BadLabel { index: usize, classes: usize },
    #[error("file truncated or trailing garbage")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct CrcWriter<W: Write> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Write a dataset; all clouds must share one point count and be labeled.
pub fn write_packed(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), PackError> {
    let classes = dataset.class_count();
    let n_points = dataset.clouds.first().map_or(0, |c| c.len());
    for (index, cloud) in dataset.clouds.iter().enumerate() {
        if cloud.len() != n_points {
            return Err(PackError::NonUniformPointCount {
                index,
                points: cloud.len(),
                expected: n_points,
            });
        }
        match cloud.label {
            Some(l) if (l as usize) < classes => {}
            _ => return Err(PackError::BadLabel { index, classes }),
        }
    }

    let mut w = CrcWriter {
        inner: BufWriter::new(File::create(path)?),
        hasher: crc32fast::Hasher::new(),
    };
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(dataset.clouds.len() as u32)?;
    w.write_u32::<LittleEndian>(n_points as u32)?;
    w.write_u32::<LittleEndian>(classes as u32)?;
    for name in &dataset.class_names {
        let bytes = name.as_bytes();
        w.write_u16::<LittleEndian>(bytes.len() as u16)?;
        w.write_all(bytes)?;
    }
    for cloud in &dataset.clouds {
        w.write_u16::<LittleEndian>(cloud.label.unwrap())?;
        for p in &cloud.points {
            w.write_f32::<LittleEndian>(p.x)?;
            w.write_f32::<LittleEndian>(p.y)?;
            w.write_f32::<LittleEndian>(p.z)?;
        }
    }
    let crc = w.hasher.clone().finalize();
    w.write_u32::<LittleEndian>(crc)?;
    w.flush()?;
    Ok(())
}

/// Read a packed dataset, verifying magic, version, and checksum.
pub fn read_packed(path: impl AsRef<Path>) -> Result<Dataset, PackError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(PackError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(PackError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(PackError::ChecksumMismatch { stored, computed });
    }

    let mut r = &body[4..];
    let version = r.read_u32::<LittleEndian>().map_err(|_| PackError::Truncated)?;
    if version != VERSION {
        return Err(PackError::BadVersion(version));
    }
    let n_clouds = r.read_u32::<LittleEndian>().map_err(|_| PackError::Truncated)? as usize;
    let n_points = r.read_u32::<LittleEndian>().map_err(|_| PackError::Truncated)? as usize;
    let classes = r.read_u32::<LittleEndian>().map_err(|_| PackError::Truncated)? as usize;
    let mut class_names = Vec::with_capacity(classes);
    for _ in 0..classes {
        let len = r.read_u16::<LittleEndian>().map_err(|_| PackError::Truncated)? as usize;
        if r.len() < len {
            return Err(PackError::Truncated);
        }
        let (name, rest) = r.split_at(len);
        class_names.push(
            String::from_utf8(name.to_vec()).map_err(|_| PackError::Truncated)?,
        );
        r = rest;
    }
    let mut clouds = Vec::with_capacity(n_clouds);
    for index in 0..n_clouds {
        let label = r.read_u16::<LittleEndian>().map_err(|_| PackError::Truncated)?;
        if (label as usize) >= classes {
            return Err(PackError::BadLabel { index, classes });
        }
        let mut points = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let x = r.read_f32::<LittleEndian>().map_err(|_| PackError::Truncated)?;
            let y = r.read_f32::<LittleEndian>().map_err(|_| PackError::Truncated)?;
            let z = r.read_f32::<LittleEndian>().map_err(|_| PackError::Truncated)?;
            points.push(Point3::new(x, y, z));
        }
        clouds.push(PointCloud { points, label: Some(label) });
    }
    if !r.is_empty() {
        return Err(PackError::Truncated);
    }
    Ok(Dataset { clouds, class_names })
}
