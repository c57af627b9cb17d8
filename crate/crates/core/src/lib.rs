//! Graph-convolutional neural network engine for 3D point cloud classification.
//!
//! The crate covers the full numerical pipeline: point-cloud normalization and
//! sampling, symmetrized Gaussian-weighted kNN graph construction, Chebyshev
//! polynomial graph filtering with hand-written reverse-mode gradients, global
//! and multi-resolution pooling, a softmax classification head, and an Adam
//! optimizer. Everything here is pure computation over in-memory data; file
//! formats, the training loop, and the CLI live in the companion `pointgcn`
//! crate.
//!
//! The crate is `no_std` (with `alloc`) so the numeric core stays free of
//! platform dependencies; float intrinsics come from `libm` via `num-traits`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod chebfilter;
pub mod data;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod pointcloud;
pub mod rng;
pub mod sparse;

mod error;

pub use error::{Error, Result};
