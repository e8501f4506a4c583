//! Observation model and feature front-end.

mod convolve;
mod features;
mod noise;
mod synth;
pub mod wav;

use serde::{Deserialize, Serialize};

pub use convolve::{convolve, convolve_direct, FftConvolver};
pub use features::{
    frame_count, read_feature_cache, standardize, stft_logmag, write_feature_cache, FeatureMatrix,
    Standardization, FFT_SIZE, HOP_SIZE, LOG_EPS, NUM_BINS,
};
pub use noise::add_noise;
pub use synth::{spectral_centroid, synth_source};

/// Origin of an anechoic source segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceOrigin {
    File { path: std::path::PathBuf, offset: usize },
    Synthetic { seed: u64 },
}

/// A fixed-length anechoic source excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSegment {
    pub source_id: String,
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub origin: SourceOrigin,
}

impl SourceSegment {
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

/// Reverberant observation `y = x * h (+ n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverberantSample {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub room_id: String,
    pub rir_id: u32,
    pub source_id: String,
    pub snr_db: Option<f64>,
}

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Segments below this RMS are treated as silent.
pub const SILENCE_RMS: f64 = 1e-6;
