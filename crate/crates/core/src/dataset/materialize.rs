use std::collections::{HashMap, VecDeque};
use std::sync::mpsc::sync_channel;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use realfft::num_complex::Complex;

use super::sampler::{BatchPlan, View};
use super::{SourceCorpus, Strategy};
use crate::acoustics::{RirKey, RirRecord};
use crate::rng::{derive_seed, substream, Stream};
use crate::signal::{add_noise, standardize, stft_logmag, FeatureMatrix, FftConvolver, ReverberantSample};
use crate::{Error, Result, SAMPLE_RATE_HZ};

/// Features of a planned batch, in plan order.
#[derive(Debug, Clone)]
pub struct MultiviewBatch {
    pub strategy: Strategy,
    pub n: usize,
    pub m: usize,
    pub views: Vec<View>,
    pub features: Vec<FeatureMatrix>,
}

impl MultiviewBatch {
    pub fn class_labels(&self) -> Vec<i64> {
        self.views.iter().map(|v| v.class_label).collect()
    }
}

/// Small FIFO cache shared across worker threads.
struct Cache<V> {
    capacity: usize,
    map: HashMap<String, Arc<V>>,
    order: VecDeque<String>,
}

impl<V> Cache<V> {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            map: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn get(&self, key: &str) -> Option<Arc<V>> {
        self.map.get(key).cloned()
    }

    fn insert(&mut self, key: String, value: Arc<V>) {
        if self.capacity == 0 || self.map.contains_key(&key) {
            return;
        }
        while self.map.len() >= self.capacity {
            match self.order.pop_front() {
                Some(old) => {
                    self.map.remove(&old);
                }
                None => break,
            }
        }
        self.order.push_back(key.clone());
        self.map.insert(key, value);
    }
}

fn cached<V, F: FnOnce() -> Result<V>>(cache: &Mutex<Cache<V>>, key: &str, make: F) -> Result<Arc<V>> {
    if let Some(v) = cache.lock().expect("cache lock").get(key) {
        return Ok(v);
    }
    let v = Arc::new(make()?);
    cache.lock().expect("cache lock").insert(key.to_owned(), Arc::clone(&v));
    Ok(v)
}

/// Turns (RIR, source) pairings into standardized log-magnitude features:
/// convolution, optional white noise, STFT, per-sample standardization.
pub struct Materializer<'a> {
    rirs: HashMap<RirKey, &'a RirRecord>,
    corpus: &'a SourceCorpus,
    convolver: FftConvolver,
    segment_len: usize,
    snr_db: Option<f64>,
    seed: u64,
    spectra: Mutex<Cache<Vec<Complex<f64>>>>,
    sources: Mutex<Cache<Vec<f32>>>,
}

/// Default number of cached RIR spectra.
const SPECTRUM_CACHE: usize = 256;
/// Default number of cached source segments.
const SOURCE_CACHE: usize = 4096;

impl<'a> Materializer<'a> {
    pub fn new(
        rirs: &'a [RirRecord],
        corpus: &'a SourceCorpus,
        segment_len: usize,
        snr_db: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        let mut map = HashMap::with_capacity(rirs.len());
        let mut longest = 1;
        for r in rirs {
            if r.samples.is_empty() {
                return Err(Error::Config(format!("RIR {}_{} has no samples loaded", r.room_id, r.rir_id)));
            }
            if r.sample_rate_hz != SAMPLE_RATE_HZ {
                return Err(Error::SampleRateMismatch {
                    left: r.sample_rate_hz,
                    right: SAMPLE_RATE_HZ,
                });
            }
            longest = longest.max(r.samples.len());
            map.insert(r.key(), r);
        }
        Ok(Self {
            rirs: map,
            corpus,
            convolver: FftConvolver::new(segment_len, longest),
            segment_len,
            snr_db,
            seed,
            spectra: Mutex::new(Cache::new(SPECTRUM_CACHE)),
            sources: Mutex::new(Cache::new(SOURCE_CACHE)),
        })
    }

    /// Features of `source_id` reverberated by `rir`. `noise_stream`
    /// selects the noise realisation when noise is enabled.
    pub fn features(&self, rir: &RirKey, source_id: &str, noise_stream: u64) -> Result<FeatureMatrix> {
        let record = self
            .rirs
            .get(rir)
            .ok_or_else(|| Error::Config(format!("RIR {}_{} not in store", rir.room_id, rir.rir_id)))?;
        let spectrum = cached(&self.spectra, &format!("{}_{}", rir.room_id, rir.rir_id), || {
            Ok(self.convolver.spectrum(&record.samples))
        })?;
        let source = cached(&self.sources, source_id, || {
            let s = self.corpus.load(source_id)?;
            if s.samples.len() != self.segment_len {
                return Err(Error::Shape(format!(
                    "source {source_id} has {} samples, expected {}",
                    s.samples.len(),
                    self.segment_len
                )));
            }
            Ok(s.samples)
        })?;
        let y = ReverberantSample {
            samples: self.convolver.convolve_with(&source, &spectrum),
            sample_rate_hz: SAMPLE_RATE_HZ,
            room_id: rir.room_id.clone(),
            rir_id: rir.rir_id,
            source_id: source_id.to_owned(),
            snr_db: None,
        };
        let y = match self.snr_db {
            Some(_) => add_noise(y, self.snr_db, &mut substream(self.seed, Stream::Noise, noise_stream)),
            None => y,
        };
        standardize(&stft_logmag(&y.samples))
    }

    /// Materializes all views of `plan` in parallel. `batch_index` keys the
    /// noise realisations, so the result does not depend on scheduling.
    pub fn batch(&self, plan: &BatchPlan, batch_index: u64) -> Result<MultiviewBatch> {
        let base = derive_seed(batch_index, plan.views.len() as u64);
        let features = plan
            .views
            .par_iter()
            .enumerate()
            .map(|(k, v)| self.features(&v.rir_key(), &v.source_id, derive_seed(base, k as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiviewBatch {
            strategy: plan.strategy,
            n: plan.n,
            m: plan.m,
            views: plan.views.clone(),
            features,
        })
    }
}

/// Materializes `plans` on a background thread, at most `depth` batches
/// ahead, and hands them to `consume` in plan order. Plan `i` gets batch
/// index `first_index + i`.
pub fn prefetch<I, F>(
    materializer: &Materializer<'_>,
    plans: I,
    depth: usize,
    first_index: u64,
    mut consume: F,
) -> Result<()>
where
    I: IntoIterator<Item = Result<BatchPlan>>,
    I::IntoIter: Send,
    F: FnMut(usize, MultiviewBatch) -> Result<()>,
{
    let plans = plans.into_iter();
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel::<Result<MultiviewBatch>>(depth.max(1));
        scope.spawn(move || {
            for (i, plan) in plans.enumerate() {
                let batch = plan.and_then(|p| materializer.batch(&p, first_index + i as u64));
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });
        for (i, batch) in rx.iter().enumerate() {
            consume(i, batch?)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::super::build::tests::fake_rirs;
    use super::super::sampler::{sample_batch, SplitPool};
    use super::super::{build_upstream, DatasetConfig, Split, SplitCounts};
    use super::*;
    use crate::rng::stream;
    use crate::signal::{convolve_direct, NUM_BINS};

    fn setup() -> (Vec<RirRecord>, SourceCorpus, DatasetConfig) {
        let cfg = DatasetConfig {
            upstream_per_room: SplitCounts { train: 6, val: 3, test: 3 },
            upstream_rooms: 4,
            segment_s: 0.05,
            ..DatasetConfig::default()
        };
        let corpus = SourceCorpus::synthetic(SplitCounts { train: 8, val: 4, test: 4 }, cfg.segment_len(), 2, "s");
        (fake_rirs("u", 4, 2), corpus, cfg)
    }

    #[test]
    fn features_match_direct_pipeline() {
        let (rirs, corpus, cfg) = setup();
        let mat = Materializer::new(&rirs, &corpus, cfg.segment_len(), None, 0).unwrap();
        let f = mat.features(&rirs[3].key(), "s-train-000002", 0).unwrap();
        let x = corpus.load("s-train-000002").unwrap().samples;
        let mut y = convolve_direct(&x, &rirs[3].samples);
        y.truncate(x.len());
        let want = standardize(&stft_logmag(&y)).unwrap();
        assert_eq!(f.rows, NUM_BINS);
        assert_eq!(f.cols, want.cols);
        let worst = f
            .values
            .iter()
            .zip(&want.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn batches_are_deterministic_and_ordered() {
        let (rirs, corpus, cfg) = setup();
        let man = build_upstream(&rirs, &corpus, &cfg, 1).unwrap();
        let pool = SplitPool::new(&man, Split::Train).unwrap();
        let mat = Materializer::new(&rirs, &corpus, cfg.segment_len(), Some(20.0), 5).unwrap();
        let plans = || {
            let mut rng = stream(3, Stream::Batches);
            (0..3)
                .map(|_| sample_batch(&pool, Strategy::Soft, 3, 2, &mut rng))
                .collect::<Vec<_>>()
        };
        let mut first = Vec::new();
        prefetch(&mat, plans(), 2, 0, |i, b| {
            assert_eq!(b.features.len(), 6);
            first.push((i, b.class_labels(), b.features[0].values.clone()));
            Ok(())
        })
        .unwrap();
        let mut second = Vec::new();
        for (i, p) in plans().into_iter().enumerate() {
            let b = mat.batch(&p.unwrap(), i as u64).unwrap();
            second.push((i, b.class_labels(), b.features[0].values.clone()));
        }
        assert_eq!(first, second);
    }

    #[test]
    fn prefetch_propagates_errors() {
        let (rirs, corpus, cfg) = setup();
        let mat = Materializer::new(&rirs, &corpus, cfg.segment_len(), None, 5).unwrap();
        let plans = vec![Err(Error::Sampling("boom".into()))];
        let err = prefetch(&mat, plans, 1, 0, |_, _| Ok(())).unwrap_err();
        assert!(err.to_string().contains("boom"));
    }
}
