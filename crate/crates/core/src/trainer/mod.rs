//! Upstream contrastive training, frozen-encoder downstream training, the
//! supervised baseline and the experiment grid.

mod downstream;
mod grid;
mod upstream;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use downstream::{
    evaluate, load_downstream, train_downstream, train_supervised_baseline, DownstreamModel, EvalReport,
};
pub use grid::{run_experiment_grid, CellKind, GridCell, GridConfig, GridReport};
pub use upstream::{load_upstream, train_upstream, UpstreamModel};

use crate::acoustics::RirRecord;
use crate::dataset::{DatasetManifest, Materializer, SourceCorpus, Strategy};
pub use crate::model::Task;
use crate::model::{Encoder, EncoderConfig};
use crate::signal::{frame_count, NUM_BINS};
use crate::{Error, Result, SAMPLE_RATE_HZ};

/// Training hyperparameters. Defaults are the published values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Contrastive temperature.
    pub temperature: f64,
    pub strategy: Strategy,
    /// Classes per multiview batch.
    pub n: usize,
    /// Views per class.
    pub m: usize,
    pub lr: f64,
    pub batches_per_epoch: usize,
    pub val_batches: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub downstream_batch: usize,
    /// Batches materialized ahead of the optimizer.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            strategy: Strategy::Soft,
            n: 24,
            m: 3,
            lr: 1e-3,
            batches_per_epoch: 128,
            val_batches: 32,
            patience: 4,
            max_epochs: 200,
            downstream_batch: 16,
            prefetch: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        let counts = [
            ("n", self.n),
            ("batches_per_epoch", self.batches_per_epoch),
            ("val_batches", self.val_batches),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("downstream_batch", self.downstream_batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.m < 2 {
            return Err(Error::Config(format!("m = {} leaves no positives; need m >= 2", self.m)));
        }
        Ok(())
    }
}

/// Outcome of one epoch under early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience rule: stop once the validation loss has not strictly
/// decreased for `patience` consecutive epochs. Ties do not count as
/// improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Progress {
        self.epoch += 1;
        let better = match self.best {
            None => val_loss.is_finite(),
            Some((_, b)) => val_loss < b,
        };
        if better {
            self.best = Some((self.epoch, val_loss));
            self.since_best = 0;
            return Progress::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            Progress::Stop
        } else {
            Progress::NoImprovement
        }
    }

    /// 1-based epoch and loss of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Upstream,
    Downstream,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Everything a training run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: RunKind,
    pub task: Option<Task>,
    pub strategy: Option<Strategy>,
    pub temperature: Option<f64>,
    pub seed: u64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub wall_clock_s: f64,
    pub config: TrainConfig,
    pub checkpoint: Option<PathBuf>,
    /// Encoder parameter hash before and after a frozen-encoder run.
    pub encoder_hash: Option<(u64, u64)>,
}

/// The inputs of a training run: a manifest and the stores it refers to.
#[derive(Clone, Copy)]
pub struct DataSources<'a> {
    pub manifest: &'a DatasetManifest,
    pub rirs: &'a [RirRecord],
    pub corpus: &'a SourceCorpus,
}

impl<'a> DataSources<'a> {
    pub fn segment_len(&self) -> usize {
        (self.manifest.meta.segment_s * f64::from(SAMPLE_RATE_HZ)).round() as usize
    }

    /// STFT frames of one segment.
    pub fn frames(&self) -> usize {
        frame_count(self.segment_len())
    }

    pub fn materializer(&self, seed: u64) -> Result<Materializer<'a>> {
        Materializer::new(self.rirs, self.corpus, self.segment_len(), self.manifest.meta.snr_db, seed)
    }

    /// A freshly initialised encoder for this data's input size.
    pub fn new_encoder(&self, config: &EncoderConfig, seed: u64) -> Result<Encoder<f32>> {
        Encoder::new(config.clone(), NUM_BINS, self.frames(), seed)
    }
}

/// Output directory of one run: `config.json`, `record.json`,
/// `best.ckpt` (+ sidecar) and `log.txt`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

pub const CONFIG_FILE: &str = "config.json";
pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "log.txt";

impl RunDir {
    /// Creates `path`. An existing non-empty directory is refused unless
    /// `force` is set, in which case its run files are replaced.
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let non_empty = fs::read_dir(path).map_err(|e| Error::io(path, e))?.next().is_some();
            if non_empty && !force {
                return Err(Error::Config(format!(
                    "run directory {} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
            for f in [RECORD_FILE, CHECKPOINT_FILE, LOG_FILE] {
                let p = path.join(f);
                if p.exists() {
                    fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.path.join(CHECKPOINT_FILE)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<()> {
        let p = self.path.join(name);
        fs::write(&p, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(&p, e))
    }

    pub fn log(&self, line: &str) -> Result<()> {
        let p = self.path.join(LOG_FILE);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&p, e))
    }
}

fn log_line(run: Option<&RunDir>, line: String) -> Result<()> {
    log::info!("{line}");
    match run {
        Some(r) => r.log(&line),
        None => Ok(()),
    }
}

/// Metadata stored next to a checkpoint so it can be rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: RunKind,
    pub encoder: EncoderConfig,
    pub bins: usize,
    pub frames: usize,
    pub task: Option<Task>,
    pub best_epoch: usize,
}
