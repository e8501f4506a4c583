use std::path::Path;
use std::time::Instant;

use super::{log_line, CheckpointMeta, DataSources, EarlyStopping, Progress, RunDir, RunKind, RunRecord, StopReason, TrainConfig};
use crate::dataset::{prefetch, sample_batch, MultiviewBatch, Split, SplitPool};
use crate::model::checkpoint::{sidecar_path, write_sidecar, OPTIMIZER_PREFIX};
use crate::model::{projection, Adam, Checkpoint, Encoder, EncoderConfig, Mode, Network, Param, Tensor};
use crate::objectives::supcon_loss_grad;
use crate::rng::{derive_seed, stream, Stream};
use crate::{Error, Result};

/// Encoder plus projection head trained with the contrastive loss.
#[derive(Debug, Clone)]
pub struct UpstreamModel {
    pub encoder: Encoder<f32>,
    pub projection: Network<f32>,
}

impl UpstreamModel {
    pub fn new(data: &DataSources<'_>, config: &EncoderConfig, seed: u64) -> Result<Self> {
        let encoder = data.new_encoder(config, seed)?;
        let projection = projection(config.embedding_dim, &mut stream(derive_seed(seed, 1), Stream::Init));
        Ok(Self { encoder, projection })
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<f32>)> {
        let mut out: Vec<(String, &mut Param<f32>)> = self
            .encoder
            .net
            .params_mut()
            .into_iter()
            .map(|(n, p)| (format!("encoder/{n}"), p))
            .collect();
        out.extend(
            self.projection
                .params_mut()
                .into_iter()
                .map(|(n, p)| (format!("projection/{n}"), p)),
        );
        out
    }

    fn zero_grad(&mut self) {
        self.encoder.net.zero_grad();
        self.projection.zero_grad();
    }

    /// Contrastive loss of one batch; with `train` set, also accumulates
    /// gradients.
    fn batch_loss(&mut self, batch: &MultiviewBatch, temperature: f64, mode: Mode, train: bool) -> Result<f64> {
        let refs: Vec<_> = batch.features.iter().collect();
        let e = self.encoder.embed(&refs, mode)?;
        let z = self.projection.forward(&e, mode)?;
        let dim = z.shape()[1];
        let (loss, grad) = supcon_loss_grad(&z.to_f64(), dim, &batch.class_labels(), temperature)?;
        if train && loss.is_finite() {
            let gz = Tensor::from_f64(z.shape().to_vec(), &grad)?;
            let ge = self.projection.backward(&gz)?;
            self.encoder.backward(&ge)?;
        }
        Ok(loss)
    }

    fn checkpoint(&self, adam: Option<&Adam<f32>>) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.add_network("encoder/", &self.encoder.net);
        ck.add_network("projection/", &self.projection);
        if let Some(a) = adam {
            for (n, t) in a.state(OPTIMIZER_PREFIX) {
                ck.insert(n, &t);
            }
        }
        ck
    }

    fn save(&self, path: &Path, adam: Option<&Adam<f32>>, best_epoch: usize) -> Result<()> {
        self.checkpoint(adam).write(path)?;
        write_sidecar(
            path,
            &CheckpointMeta {
                kind: RunKind::Upstream,
                encoder: self.encoder.config.clone(),
                bins: self.encoder.input.0,
                frames: self.encoder.input.1,
                task: None,
                best_epoch,
            },
        )
    }
}

/// Reads an encoder (and projection, when present) from a checkpoint
/// written by any training run.
pub fn load_upstream(path: &Path) -> Result<UpstreamModel> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let ck = Checkpoint::read(path)?;
    let mut encoder = Encoder::new(meta.encoder.clone(), meta.bins, meta.frames, 0)?;
    ck.load_network("encoder/", &mut encoder.net)?;
    let mut projection = projection(meta.encoder.embedding_dim, &mut stream(0, Stream::Init));
    if ck.get("projection/fc0.weight").is_some() {
        ck.load_network("projection/", &mut projection)?;
    }
    Ok(UpstreamModel { encoder, projection })
}

/// Trains encoder and projection with the supervised contrastive loss on
/// freshly sampled multiview batches. Each epoch runs
/// `batches_per_epoch` updates, then scores `val_batches` validation
/// batches drawn with a fixed seed. The best-validation weights are
/// returned and, with `run` set, written to `best.ckpt`.
pub fn train_upstream(
    data: &DataSources<'_>,
    model_config: &EncoderConfig,
    config: &TrainConfig,
    seed: u64,
    run: Option<&RunDir>,
) -> Result<(UpstreamModel, RunRecord)> {
    config.validate()?;
    let start = Instant::now();
    let train_pool = SplitPool::new(data.manifest, Split::Train)?;
    let val_pool = SplitPool::new(data.manifest, Split::Val)?;
    let materializer = data.materializer(seed)?;
    let mut model = UpstreamModel::new(data, model_config, seed)?;
    let mut adam = Adam::new(config.lr);
    let mut best = (model.clone(), adam.clone());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut batch_rng = stream(seed, Stream::Batches);
    let (mut train_losses, mut val_losses) = (Vec::new(), Vec::new());
    let mut stop_reason = StopReason::MaxEpochs;
    let bpe = config.batches_per_epoch as u64;
    // Noise indices of training batches start above the validation ones.
    let train_base = 1u64 << 32;

    for epoch in 0..config.max_epochs {
        let plans: Vec<_> = (0..config.batches_per_epoch)
            .map(|_| sample_batch(&train_pool, config.strategy, config.n, config.m, &mut batch_rng))
            .collect();
        let mut sum = 0.0;
        let result = prefetch(&materializer, plans, config.prefetch, train_base + epoch as u64 * bpe, |i, batch| {
            model.zero_grad();
            model.encoder.net.reseed_dropout(derive_seed(seed, epoch as u64 * bpe + i as u64));
            let loss = model.batch_loss(&batch, config.temperature, Mode::Train, true);
            let loss = match loss {
                Ok(l) if l.is_finite() => l,
                Ok(l) => return Err(Error::Diverged { epoch: epoch + 1, step: i + 1, loss: l }),
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged { epoch: epoch + 1, step: i + 1, loss: f64::NAN })
                }
                Err(e) => return Err(e),
            };
            adam.step(&mut model.params_mut())?;
            sum += loss;
            Ok(())
        });
        if let Err(e) = result {
            if let (Error::Diverged { .. }, Some(r)) = (&e, run) {
                let path = r.path.join("diverged.ckpt");
                model.save(&path, Some(&adam), epoch + 1)?;
                log_line(run, format!("diverged: {e}; diagnostic checkpoint at {}", path.display()))?;
            }
            return Err(e);
        }
        let train_loss = sum / config.batches_per_epoch as f64;

        let mut val_rng = stream(seed, Stream::Validation);
        let val_plans: Vec<_> = (0..config.val_batches)
            .map(|_| sample_batch(&val_pool, config.strategy, config.n, config.m, &mut val_rng))
            .collect();
        let mut val_sum = 0.0;
        prefetch(&materializer, val_plans, config.prefetch, 0, |_, batch| {
            val_sum += model.batch_loss(&batch, config.temperature, Mode::Eval, false)?;
            Ok(())
        })?;
        let val_loss = val_sum / config.val_batches as f64;
        train_losses.push(train_loss);
        val_losses.push(val_loss);
        let progress = stopper.observe(val_loss);
        log_line(
            run,
            format!("epoch {:>3}  train {train_loss:.6}  val {val_loss:.6}{}", epoch + 1, if progress == Progress::Improved { "  *" } else { "" }),
        )?;
        match progress {
            Progress::Improved => best = (model.clone(), adam.clone()),
            Progress::NoImprovement => {}
            Progress::Stop => {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let (best_epoch, best_val_loss) = stopper
        .best()
        .ok_or_else(|| Error::NonFinite("validation loss".into()))?;
    let checkpoint = match run {
        Some(r) => {
            let p = r.checkpoint();
            best.0.save(&p, Some(&best.1), best_epoch)?;
            Some(p)
        }
        None => None,
    };
    let record = RunRecord {
        kind: RunKind::Upstream,
        task: None,
        strategy: Some(config.strategy),
        temperature: Some(config.temperature),
        seed,
        train_losses,
        val_losses,
        best_epoch,
        best_val_loss,
        stop_reason,
        wall_clock_s: start.elapsed().as_secs_f64(),
        config: config.clone(),
        checkpoint,
        encoder_hash: None,
    };
    if let Some(r) = run {
        r.write_json(super::RECORD_FILE, &record)?;
    }
    Ok((best.0, record))
}
