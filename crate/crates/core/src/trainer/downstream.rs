use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    log_line, CheckpointMeta, DataSources, EarlyStopping, Progress, RunDir, RunKind, RunRecord, StopReason,
    TrainConfig, RECORD_FILE,
};
use crate::dataset::{ManifestEntry, Materializer, Split};
use crate::metrics::{
    classification_metrics, embed_entries, entry_features, regression_metrics, ClassificationReport,
    RegressionReport,
};
use crate::model::checkpoint::{sidecar_path, write_sidecar, OPTIMIZER_PREFIX};
use crate::model::{head, parameter_hash, Adam, Checkpoint, Encoder, EncoderConfig, Mode, Network, Param, Task, Tensor};
use crate::objectives::{cross_entropy_loss_grad, mse_loss_grad};
use crate::rng::{derive_seed, stream, Stream};
use crate::{Error, Result};

/// Encoder plus a task head.
#[derive(Debug, Clone)]
pub struct DownstreamModel {
    pub encoder: Encoder<f32>,
    pub head: Network<f32>,
    pub task: Task,
}

/// Metrics of a model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalReport {
    Regression {
        task: Task,
        report: RegressionReport,
    },
    Classification {
        task: Task,
        report: ClassificationReport,
    },
}

impl EvalReport {
    /// Metric names and values in table order: RMSE/CORR/BIAS or
    /// ACC/PR/RE. An undefined correlation is NaN.
    pub fn metrics(&self) -> [(&'static str, f64); 3] {
        match self {
            EvalReport::Regression { report, .. } => [
                ("RMSE", report.rmse),
                ("CORR", report.pearson_corr.unwrap_or(f64::NAN)),
                ("BIAS", report.bias),
            ],
            EvalReport::Classification { report, .. } => [
                ("ACC", report.accuracy),
                ("PR", report.precision),
                ("RE", report.recall),
            ],
        }
    }

    pub fn task(&self) -> Task {
        match self {
            EvalReport::Regression { task, .. } | EvalReport::Classification { task, .. } => *task,
        }
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let unit = match self.task() {
            Task::Rt60 => " s",
            Task::C50 => " dB",
            Task::Volume => "",
        };
        for (name, v) in self.metrics() {
            let u = if matches!(name, "RMSE" | "BIAS") { unit } else { "" };
            if v.is_nan() {
                writeln!(f, "{name:<5} undefined")?;
            } else {
                writeln!(f, "{name:<5} {v:.4}{u}")?;
            }
        }
        match self {
            EvalReport::Regression { report, .. } => writeln!(f, "n     {}", report.n),
            EvalReport::Classification { report, .. } => {
                writeln!(f, "n     {}", report.n)?;
                if !report.precision_undefined.is_empty() {
                    writeln!(f, "note  precision undefined for class {:?} (counted as 0)", report.precision_undefined)?;
                }
                if !report.recall_undefined.is_empty() {
                    writeln!(f, "note  recall undefined for class {:?} (excluded)", report.recall_undefined)?;
                }
                Ok(())
            }
        }
    }
}

fn targets(task: Task, entries: &[ManifestEntry]) -> Result<Vec<f64>> {
    entries
        .iter()
        .map(|e| {
            let t = match task {
                Task::Rt60 => e.rt60_s,
                Task::C50 => e.c50_db,
                Task::Volume => {
                    if e.volume_class > 1 {
                        return Err(Error::TaskMismatch(format!(
                            "{}: volume class {} is not binary",
                            e.sample_id, e.volume_class
                        )));
                    }
                    f64::from(e.volume_class)
                }
            };
            if !t.is_finite() {
                return Err(Error::TaskMismatch(format!("{}: {task} label is {t}", e.sample_id)));
            }
            Ok(t)
        })
        .collect()
}

fn task_loss(task: Task, out: &Tensor<f32>, target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if out.shape().len() != 2 || out.shape()[1] != task.outputs() {
        return Err(Error::TaskMismatch(format!(
            "head output {:?} does not fit task {task}",
            out.shape()
        )));
    }
    if task.is_regression() {
        mse_loss_grad(&out.to_f64(), target)
    } else {
        let classes: Vec<usize> = target.iter().map(|&t| t as usize).collect();
        cross_entropy_loss_grad(&out.to_f64(), task.outputs(), &classes)
    }
}

fn predictions(task: Task, out: &Tensor<f32>) -> Vec<f64> {
    if task.is_regression() {
        out.to_f64()
    } else {
        out.data()
            .chunks(task.outputs())
            .map(|row| if row[1] > row[0] { 1.0 } else { 0.0 })
            .collect()
    }
}

fn report(task: Task, pred: &[f64], target: &[f64]) -> Result<EvalReport> {
    if task.is_regression() {
        Ok(EvalReport::Regression {
            task,
            report: regression_metrics(pred, target)?,
        })
    } else {
        let p: Vec<u8> = pred.iter().map(|&v| v as u8).collect();
        let t: Vec<u8> = target.iter().map(|&v| v as u8).collect();
        Ok(EvalReport::Classification {
            task,
            report: classification_metrics(&p, &t)?,
        })
    }
}

fn rows(values: &[f32], dim: usize, idx: &[usize]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        data.extend_from_slice(&values[i * dim..(i + 1) * dim]);
    }
    Tensor::new(vec![idx.len(), dim], data)
}

fn named<'a>(prefix: &str, params: Vec<(String, &'a mut Param<f32>)>) -> Vec<(String, &'a mut Param<f32>)> {
    params.into_iter().map(|(n, p)| (format!("{prefix}{n}"), p)).collect()
}

fn new_head(task: Task, config: &EncoderConfig, seed: u64) -> Network<f32> {
    head(task, config.embedding_dim, &mut stream(derive_seed(seed, 2), Stream::Init))
}

/// Starts a regression head at the mean training target. Without this the
/// rt60 head's final ReLU can begin dead on every input and never recover.
fn center_output(head: &mut Network<f32>, task: Task, targets: &[f64]) {
    if !task.is_regression() || targets.is_empty() {
        return;
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    for (name, p) in head.params_mut() {
        if name == "out.bias" {
            p.value.fill(mean as f32);
        }
    }
}

impl DownstreamModel {
    fn save(&self, path: &Path, adam: &Adam<f32>, kind: RunKind, best_epoch: usize) -> Result<()> {
        let mut ck = Checkpoint::default();
        ck.add_network("encoder/", &self.encoder.net);
        ck.add_network("head/", &self.head);
        for (n, t) in adam.state(OPTIMIZER_PREFIX) {
            ck.insert(n, &t);
        }
        ck.write(path)?;
        write_sidecar(
            path,
            &CheckpointMeta {
                kind,
                encoder: self.encoder.config.clone(),
                bins: self.encoder.input.0,
                frames: self.encoder.input.1,
                task: Some(self.task),
                best_epoch,
            },
        )
    }

    /// Predictions for `entries`: regression values or class indices.
    pub fn predict(&mut self, entries: &[ManifestEntry], materializer: &Materializer<'_>) -> Result<Vec<f64>> {
        let dim = self.encoder.config.embedding_dim;
        let emb = embed_entries(&mut self.encoder, entries, materializer, 32)?;
        let all: Vec<usize> = (0..entries.len()).collect();
        let out = self.head.forward(&rows(&emb, dim, &all)?, Mode::Eval)?;
        Ok(predictions(self.task, &out))
    }
}

/// Reads a model written by [`train_downstream`] or
/// [`train_supervised_baseline`].
pub fn load_downstream(path: &Path) -> Result<DownstreamModel> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let task = meta
        .task
        .ok_or_else(|| Error::Config(format!("{} holds no downstream head", path.display())))?;
    let ck = Checkpoint::read(path)?;
    let mut encoder = Encoder::new(meta.encoder.clone(), meta.bins, meta.frames, 0)?;
    ck.load_network("encoder/", &mut encoder.net)?;
    let mut head = new_head(task, &meta.encoder, 0);
    ck.load_network("head/", &mut head)?;
    Ok(DownstreamModel { encoder, head, task })
}

/// Metrics of `model` on `split` of the data's manifest.
pub fn evaluate(model: &mut DownstreamModel, data: &DataSources<'_>, split: Split, seed: u64) -> Result<EvalReport> {
    let entries: Vec<ManifestEntry> = data.manifest.split(split).cloned().collect();
    let target = targets(model.task, &entries)?;
    let materializer = data.materializer(seed)?;
    let pred = model.predict(&entries, &materializer)?;
    report(model.task, &pred, &target)
}

struct Loop<'a> {
    config: &'a TrainConfig,
    run: Option<&'a RunDir>,
    stopper: EarlyStopping,
    train_losses: Vec<f64>,
    val_losses: Vec<f64>,
    stop_reason: StopReason,
}

impl<'a> Loop<'a> {
    fn new(config: &'a TrainConfig, run: Option<&'a RunDir>) -> Self {
        Self {
            config,
            run,
            stopper: EarlyStopping::new(config.patience),
            train_losses: Vec::new(),
            val_losses: Vec::new(),
            stop_reason: StopReason::MaxEpochs,
        }
    }

    fn end_epoch(&mut self, train: f64, val: f64) -> Result<Progress> {
        if !train.is_finite() || !val.is_finite() {
            return Err(Error::Diverged {
                epoch: self.train_losses.len() + 1,
                step: 0,
                loss: if train.is_finite() { val } else { train },
            });
        }
        self.train_losses.push(train);
        self.val_losses.push(val);
        let p = self.stopper.observe(val);
        log_line(
            self.run,
            format!(
                "epoch {:>3}  train {train:.6}  val {val:.6}{}",
                self.train_losses.len(),
                if p == Progress::Improved { "  *" } else { "" }
            ),
        )?;
        if p == Progress::Stop {
            self.stop_reason = StopReason::Patience;
        }
        Ok(p)
    }

    fn finish(self, kind: RunKind, task: Task, seed: u64, start: Instant, checkpoint: Option<std::path::PathBuf>, encoder_hash: Option<(u64, u64)>) -> Result<RunRecord> {
        let (best_epoch, best_val_loss) = self
            .stopper
            .best()
            .ok_or_else(|| Error::NonFinite("validation loss".into()))?;
        let record = RunRecord {
            kind,
            task: Some(task),
            strategy: None,
            temperature: None,
            seed,
            train_losses: self.train_losses,
            val_losses: self.val_losses,
            best_epoch,
            best_val_loss,
            stop_reason: self.stop_reason,
            wall_clock_s: start.elapsed().as_secs_f64(),
            config: self.config.clone(),
            checkpoint,
            encoder_hash,
        };
        if let Some(r) = self.run {
            r.write_json(RECORD_FILE, &record)?;
        }
        Ok(record)
    }
}

/// Trains a task head on top of a frozen encoder. Embeddings are computed
/// once in eval mode (batch norm on running statistics, no dropout); the
/// encoder receives no gradient. Early stopping tracks the task loss on
/// the validation split.
pub fn train_downstream(
    mut encoder: Encoder<f32>,
    data: &DataSources<'_>,
    task: Task,
    config: &TrainConfig,
    seed: u64,
    run: Option<&RunDir>,
) -> Result<(DownstreamModel, RunRecord)> {
    config.validate()?;
    let start = Instant::now();
    let train: Vec<ManifestEntry> = data.manifest.split(Split::Train).cloned().collect();
    let val: Vec<ManifestEntry> = data.manifest.split(Split::Val).cloned().collect();
    let (y_train, y_val) = (targets(task, &train)?, targets(task, &val)?);
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput);
    }
    let materializer = data.materializer(seed)?;
    let hash_before = parameter_hash(&encoder.net);
    let dim = encoder.config.embedding_dim;
    let e_train = embed_entries(&mut encoder, &train, &materializer, 32)?;
    let e_val = embed_entries(&mut encoder, &val, &materializer, 32)?;
    let val_x = rows(&e_val, dim, &(0..val.len()).collect::<Vec<_>>())?;

    let mut head = new_head(task, &encoder.config, seed);
    center_output(&mut head, task, &y_train);
    let mut adam = Adam::new(config.lr);
    let mut best = (head.clone(), adam.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = stream(seed, Stream::Batches);
    let mut lp = Loop::new(config, run);
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(config.downstream_batch) {
            head.zero_grad();
            let out = head.forward(&rows(&e_train, dim, idx)?, Mode::Train)?;
            let t: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
            let (loss, grad) = task_loss(task, &out, &t)?;
            head.backward(&Tensor::from_f64(out.shape().to_vec(), &grad)?)?;
            adam.step(&mut named("head/", head.params_mut()))?;
            sum += loss;
            batches += 1;
        }
        let out = head.forward(&val_x, Mode::Eval)?;
        let val_loss = task_loss(task, &out, &y_val)?.0;
        match lp.end_epoch(sum / batches as f64, val_loss)? {
            Progress::Improved => best = (head.clone(), adam.clone()),
            Progress::NoImprovement => {}
            Progress::Stop => break,
        }
    }

    let hash_after = parameter_hash(&encoder.net);
    if hash_after != hash_before {
        return Err(Error::Config("encoder parameters changed during frozen training".into()));
    }
    let model = DownstreamModel {
        encoder,
        head: best.0,
        task,
    };
    let best_epoch = lp.stopper.best().map_or(0, |b| b.0);
    let checkpoint = match run {
        Some(r) => {
            model.save(&r.checkpoint(), &best.1, RunKind::Downstream, best_epoch)?;
            Some(r.checkpoint())
        }
        None => None,
    };
    let record = lp.finish(RunKind::Downstream, task, seed, start, checkpoint, Some((hash_before, hash_after)))?;
    Ok((model, record))
}

/// Trains encoder and head end to end from random initialisation, with
/// dropout active in the encoder.
pub fn train_supervised_baseline(
    data: &DataSources<'_>,
    model_config: &EncoderConfig,
    task: Task,
    config: &TrainConfig,
    seed: u64,
    run: Option<&RunDir>,
) -> Result<(DownstreamModel, RunRecord)> {
    config.validate()?;
    let start = Instant::now();
    let train: Vec<ManifestEntry> = data.manifest.split(Split::Train).cloned().collect();
    let val: Vec<ManifestEntry> = data.manifest.split(Split::Val).cloned().collect();
    let (y_train, y_val) = (targets(task, &train)?, targets(task, &val)?);
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput);
    }
    let materializer = data.materializer(seed)?;
    let encoder = data.new_encoder(model_config, seed)?;
    let mut model = DownstreamModel {
        head: new_head(task, &encoder.config, seed),
        encoder,
        task,
    };
    center_output(&mut model.head, task, &y_train);
    let mut adam = Adam::new(config.lr);
    let mut best = (model.clone(), adam.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = stream(seed, Stream::Batches);
    let mut lp = Loop::new(config, run);
    let mut step = 0u64;
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(config.downstream_batch) {
            let chunk: Vec<ManifestEntry> = idx.iter().map(|&i| train[i].clone()).collect();
            let features = entry_features(&chunk, &materializer)?;
            let refs: Vec<_> = features.iter().collect();
            model.encoder.net.zero_grad();
            model.head.zero_grad();
            model.encoder.net.reseed_dropout(derive_seed(seed, step));
            step += 1;
            let e = model.encoder.embed(&refs, Mode::Train)?;
            let out = model.head.forward(&e, Mode::Train)?;
            let t: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
            let (loss, grad) = task_loss(task, &out, &t)?;
            let ge = model.head.backward(&Tensor::from_f64(out.shape().to_vec(), &grad)?)?;
            model.encoder.backward(&ge)?;
            let mut params = named("encoder/", model.encoder.net.params_mut());
            params.extend(named("head/", model.head.params_mut()));
            adam.step(&mut params)?;
            sum += loss;
            batches += 1;
        }
        let pred_out = {
            let dim = model.encoder.config.embedding_dim;
            let emb = embed_entries(&mut model.encoder, &val, &materializer, 32)?;
            model.head.forward(&rows(&emb, dim, &(0..val.len()).collect::<Vec<_>>())?, Mode::Eval)?
        };
        let val_loss = task_loss(task, &pred_out, &y_val)?.0;
        match lp.end_epoch(sum / batches as f64, val_loss)? {
            Progress::Improved => best = (model.clone(), adam.clone()),
            Progress::NoImprovement => {}
            Progress::Stop => break,
        }
    }
    let best_epoch = lp.stopper.best().map_or(0, |b| b.0);
    let checkpoint = match run {
        Some(r) => {
            best.0.save(&r.checkpoint(), &best.1, RunKind::Baseline, best_epoch)?;
            Some(r.checkpoint())
        }
        None => None,
    };
    let record = lp.finish(RunKind::Baseline, task, seed, start, checkpoint, None)?;
    Ok((best.0, record))
}
