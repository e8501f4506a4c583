//! Application-level configuration file (JSON). Every section is optional
//! and falls back to its defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::AcousticsConfig;
use crate::dataset::DatasetConfig;
use crate::model::EncoderConfig;
use crate::signal::{FFT_SIZE, HOP_SIZE};
use crate::trainer::{GridConfig, TrainConfig};
use crate::{Error, Result, SAMPLE_RATE_HZ};

/// Feature front end. The values are fixed by the model input shape; the
/// section exists so the effective config documents them, and a file
/// asking for anything else is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub sample_rate_hz: u32,
    pub fft_size: usize,
    pub hop_size: usize,
    pub window: String,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: SAMPLE_RATE_HZ,
            fft_size: FFT_SIZE,
            hop_size: HOP_SIZE,
            window: "hann-periodic".into(),
        }
    }
}

/// Default locations used when a command is not given explicit paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub upstream_rirs: PathBuf,
    pub downstream_rirs: PathBuf,
    pub upstream_dataset: PathBuf,
    pub downstream_dataset: PathBuf,
    pub runs: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            upstream_rirs: "data/rirs-upstream".into(),
            downstream_rirs: "data/rirs-downstream".into(),
            upstream_dataset: "data/upstream".into(),
            downstream_dataset: "data/downstream".into(),
            runs: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    /// Master seed all random streams derive from.
    pub seed: u64,
    pub acoustics: AcousticsConfig,
    pub signal: SignalConfig,
    pub dataset: DatasetConfig,
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub paths: PathsConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            acoustics: AcousticsConfig::default(),
            signal: SignalConfig::default(),
            dataset: DatasetConfig::default(),
            model: EncoderConfig::default(),
            train: TrainConfig::default(),
            grid: GridConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl AppConfig {
    /// Small settings that finish on one CPU core in minutes: 1 s
    /// segments, 5% of the published split sizes and short epochs.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.dataset.segment_s = 1.0;
        c.dataset.scale = 0.05;
        c.train.batches_per_epoch = 32;
        c.train.val_batches = 8;
        c.train.max_epochs = 40;
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal != SignalConfig::default() {
            return Err(Error::Config(format!(
                "signal settings are fixed at {:?}",
                SignalConfig::default()
            )));
        }
        if self.acoustics.sim.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::SampleRateMismatch {
                left: self.acoustics.sim.sample_rate_hz,
                right: SAMPLE_RATE_HZ,
            });
        }
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.grid.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 7, "train": {"temperature": 0.01}}"#).unwrap();
        let c = AppConfig::load(&p).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.temperature, 0.01);
        assert_eq!(c.train.patience, 4);
        assert_eq!(c.dataset, DatasetConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.json");
        std::fs::write(&p, r#"{"sed": 7}"#).unwrap();
        assert!(matches!(AppConfig::load(&p), Err(Error::Format { .. })));
        std::fs::write(&p, r#"{"train": {"temperature": -1}}"#).unwrap();
        assert!(matches!(AppConfig::load(&p), Err(Error::InvalidTemperature(_))));
        std::fs::write(&p, r#"{"signal": {"hop_size": 8}}"#).unwrap();
        assert!(matches!(AppConfig::load(&p), Err(Error::Config(_))));
        std::fs::write(&p, r#"{"grid": {"temperatures": [0.1, -2]}}"#).unwrap();
        assert!(matches!(AppConfig::load(&p), Err(Error::InvalidTemperature(_))));
    }

    #[test]
    fn round_trip() {
        let c = AppConfig::desk();
        let back: AppConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
