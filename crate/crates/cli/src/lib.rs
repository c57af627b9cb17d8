//! Std companion to `pointgcn-core`: file formats (OFF meshes, packed
//! datasets, checkpoints), the training pipeline with metrics and reports,
//! and the command-line interface.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod off;
pub mod pack;
pub mod report;
pub mod train;
