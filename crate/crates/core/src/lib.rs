//! Room-acoustic environment embeddings learned from single-channel
//! reverberant speech.
//!
//! The crate covers the whole pipeline:
//!
//! * [`acoustics`]: shoebox room sampling, image-source RIR simulation with
//!   octave-band absorption, and ground-truth RT60 / C50.
//! * [`signal`]: the observation model `y = x * h + n`, STFT log-magnitude
//!   features and per-sample standardization, synthetic speech-like sources.
//! * [`dataset`]: upstream / downstream manifests and multiview batch
//!   sampling (soft, hard, position-independent).
//! * [`model`]: a small from-scratch CNN encoder, projection head and
//!   downstream heads with hand-written reverse-mode gradients and Adam.
//! * [`objectives`]: supervised contrastive loss, MSE and cross-entropy.
//! * [`trainer`]: upstream / downstream / baseline training with early
//!   stopping, and the experiment grid.
//! * [`metrics`]: regression and classification metrics, embedding export.

pub mod acoustics;
pub mod config;
pub mod dataset;
mod error;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod signal;
pub mod trainer;

pub use error::{Error, Result};

pub use acoustics::{Material, MaterialTable, RirRecord, Room, SimConfig};
pub use dataset::{DatasetManifest, ManifestEntry, MultiviewBatch, Split, Strategy};
pub use model::{Encoder, EncoderConfig, Tensor};
pub use signal::{FeatureMatrix, ReverberantSample, SourceSegment};
pub use trainer::{RunRecord, Task, TrainConfig};

/// Audio sample rate used throughout the pipeline.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Speed of sound in air, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
