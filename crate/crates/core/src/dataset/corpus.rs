use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Split, SplitCounts};
use crate::rng::{derive_seed, stream, Stream};
use crate::signal::wav::{read_wav_range, segment_wav_dir};
use crate::signal::{synth_source, SourceOrigin, SourceSegment};
use crate::{Error, Result, SAMPLE_RATE_HZ};

/// Index file of a source corpus.
pub const SEGMENTS_NAME: &str = "segments.jsonl";

/// One anechoic excerpt of the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSegment {
    pub source_id: String,
    pub split: Split,
    pub num_samples: usize,
    pub origin: SourceOrigin,
}

/// Split-tagged anechoic source segments, loaded on demand.
#[derive(Debug, Clone, Default)]
pub struct SourceCorpus {
    segments: Vec<CorpusSegment>,
    index: HashMap<String, usize>,
}

impl SourceCorpus {
    pub fn new(segments: Vec<CorpusSegment>) -> Result<Self> {
        let mut index = HashMap::with_capacity(segments.len());
        for (i, s) in segments.iter().enumerate() {
            if index.insert(s.source_id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate source id {}", s.source_id)));
            }
        }
        Ok(Self { segments, index })
    }

    /// Speech-like synthetic sources. Ids are `<prefix>-<split>-<index>`;
    /// each segment regenerates from its own seed.
    pub fn synthetic(counts: SplitCounts, segment_len: usize, seed: u64, prefix: &str) -> Self {
        let mut segments = Vec::with_capacity(counts.total());
        let mut k = 0u64;
        for split in Split::ALL {
            for i in 0..counts.get(split) {
                segments.push(CorpusSegment {
                    source_id: format!("{prefix}-{split}-{i:06}"),
                    split,
                    num_samples: segment_len,
                    origin: SourceOrigin::Synthetic {
                        seed: derive_seed(seed, k),
                    },
                });
                k += 1;
            }
        }
        Self::new(segments).expect("synthetic ids are unique")
    }

    /// Cuts the WAV files below `dir` into segments and assigns them to
    /// splits in contiguous blocks proportional to `ratio`.
    pub fn from_wav_dir(dir: &Path, segment_len: usize, stride: usize, ratio: SplitCounts) -> Result<Self> {
        let cuts = segment_wav_dir(dir, SAMPLE_RATE_HZ, segment_len, stride)?;
        let total = cuts.len();
        let weight = ratio.total().max(1);
        let train_end = total * ratio.train / weight;
        let val_end = train_end + total * ratio.val / weight;
        let segments = cuts
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let split = if i < train_end {
                    Split::Train
                } else if i < val_end {
                    Split::Val
                } else {
                    Split::Test
                };
                let stem = c.file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                CorpusSegment {
                    source_id: format!("{stem}@{}", c.offset),
                    split,
                    num_samples: segment_len,
                    origin: SourceOrigin::File {
                        path: c.file,
                        offset: c.offset,
                    },
                }
            })
            .collect();
        Self::new(segments)
    }

    pub fn segments(&self) -> &[CorpusSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.segments
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.source_id.as_str())
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusSegment> {
        self.index.get(id).map(|&i| &self.segments[i])
    }

    /// Loads (or regenerates) the samples of segment `id`.
    pub fn load(&self, id: &str) -> Result<SourceSegment> {
        let seg = self
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown source id {id}")))?;
        let samples = match &seg.origin {
            SourceOrigin::Synthetic { seed } => {
                let mut rng = stream(*seed, Stream::Sources);
                let duration = seg.num_samples as f64 / f64::from(SAMPLE_RATE_HZ);
                return Ok(synth_source(&mut rng, duration, id, *seed));
            }
            SourceOrigin::File { path, offset } => {
                let (samples, rate) = read_wav_range(path, *offset, seg.num_samples)?;
                if rate != SAMPLE_RATE_HZ {
                    return Err(Error::SampleRateMismatch {
                        left: rate,
                        right: SAMPLE_RATE_HZ,
                    });
                }
                if samples.len() != seg.num_samples {
                    return Err(Error::Format {
                        path: path.clone(),
                        reason: format!("segment at {offset} is truncated"),
                    });
                }
                samples
            }
        };
        Ok(SourceSegment {
            source_id: id.to_owned(),
            samples,
            sample_rate_hz: SAMPLE_RATE_HZ,
            origin: seg.origin.clone(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(SEGMENTS_NAME);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for s in &self.segments {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SEGMENTS_NAME);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut segments = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            segments.push(serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.clone(),
                reason: format!("line {}: {e}", i + 1),
            })?);
        }
        Self::new(segments)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::wav::write_wav_f32;

    #[test]
    fn synthetic_corpus_is_reproducible() {
        let counts = SplitCounts { train: 3, val: 2, test: 1 };
        let c = SourceCorpus::synthetic(counts, 1600, 5, "syn");
        assert_eq!(c.ids(Split::Val).len(), 2);
        let a = c.load("syn-val-000001").unwrap();
        let b = c.load("syn-val-000001").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 1600);
        assert_ne!(a.samples, c.load("syn-val-000000").unwrap().samples);
    }

    #[test]
    fn index_round_trip_and_file_segments() {
        let dir = tempfile::tempdir().unwrap();
        let speech = dir.path().join("speech");
        std::fs::create_dir_all(&speech).unwrap();
        let x: Vec<f32> = (0..6000).map(|i| ((i as f32) * 0.05).sin() * 0.2).collect();
        write_wav_f32(&speech.join("spk.wav"), &x, 16000).unwrap();
        let c = SourceCorpus::from_wav_dir(&speech, 1000, 1000, SplitCounts { train: 4, val: 1, test: 1 }).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c.ids(Split::Train).len(), 4);
        let seg = c.load("spk@2000").unwrap();
        assert_eq!(seg.samples, x[2000..3000]);

        c.write(dir.path()).unwrap();
        let back = SourceCorpus::read(dir.path()).unwrap();
        assert_eq!(back.segments(), c.segments());
    }
}
