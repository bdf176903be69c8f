//! Experiment configuration and the command implementations behind the
//! `erd` binary.

pub mod commands;
mod config;

pub use config::{apply_set, set_path, DataConfig, ExperimentConfig, StreamConfig, SEED_ENV};
