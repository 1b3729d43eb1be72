//! Human activity recognition toolkit.
//!
//! The crate covers the whole activity recognition chain for tri-axial
//! accelerometer recordings: ingestion and subject-wise splitting
//! ([`data`]), sliding-window segmentation ([`windowing`]), hand-crafted
//! features ([`features`]), a random forest ([`forest`]), a small
//! convolutional network engine with reverse-mode gradients ([`nn`]),
//! time-series augmentations ([`augment`]), self-supervised pretext tasks
//! ([`ssl`]), metrics ([`metrics`]) and the config-driven experiment
//! harness ([`config`], [`pipeline`]).

pub mod augment;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod forest;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod ssl;
pub mod synthetic;
pub mod windowing;

pub use error::{HarError, Result};

/// Toolkit version embedded in every artifact written to disk.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
