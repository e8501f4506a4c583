//! Upstream / downstream dataset manifests, the source corpus, multiview
//! batch sampling and on-the-fly materialization of reverberant features.

mod build;
mod corpus;
mod materialize;
mod sampler;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use build::{build_downstream, build_upstream, scaled_count};
pub use corpus::{CorpusSegment, SourceCorpus, SEGMENTS_NAME};
pub use materialize::{prefetch, Materializer, MultiviewBatch};
pub use sampler::{sample_batch, BatchPlan, SplitPool, View, MAX_REDRAWS};

use crate::acoustics::RirKey;
use crate::{Error, Result};

/// Rooms larger than this volume form class 1 of the volume task.
pub const VOLUME_BOUNDARY_M3: f64 = 160.0;

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const META_NAME: &str = "dataset.json";

/// Volume class: 1 iff `volume_m3 > 160`, so exactly 160 is "small".
pub fn volume_class(volume_m3: f64) -> u8 {
    u8::from(volume_m3 > VOLUME_BOUNDARY_M3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}, expected train, val or test"))),
        }
    }
}

/// Multiview batch construction strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Each RIR is a class; every view has its own random source.
    #[serde(rename = "soft")]
    Soft,
    /// Each RIR is a class; all classes share one set of M sources.
    #[serde(rename = "hard")]
    Hard,
    /// Each room is a class; every view picks a random RIR of the room.
    #[serde(rename = "pos-independent")]
    PosIndependent,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Soft, Strategy::Hard, Strategy::PosIndependent];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Soft => "soft",
            Strategy::Hard => "hard",
            Strategy::PosIndependent => "pos-independent",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Strategy::Soft),
            "hard" => Ok(Strategy::Hard),
            "pos-independent" | "pos_independent" => Ok(Strategy::PosIndependent),
            _ => Err(Error::Config(format!(
                "unknown strategy {s:?}, expected one of {{soft,hard,pos-independent}}"
            ))),
        }
    }
}

/// Which of the two disjoint datasets a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Upstream,
    Downstream,
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upstream" => Ok(Role::Upstream),
            "downstream" => Ok(Role::Downstream),
            _ => Err(Error::Config(format!("unknown role {s:?}, expected upstream or downstream"))),
        }
    }
}

/// Per-split counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Dataset construction settings. Defaults are the full-scale sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Upstream source segments per room and split.
    pub upstream_per_room: SplitCounts,
    /// Downstream entries per split.
    pub downstream_sizes: SplitCounts,
    /// Minimum rooms / RIRs the stores must provide.
    pub upstream_rooms: usize,
    pub downstream_rooms: usize,
    pub downstream_rirs_per_room: usize,
    /// Source segment duration, seconds.
    pub segment_s: f64,
    /// Uniform scale applied to every split size.
    pub scale: f64,
    /// Optional additive white noise; `None` disables it.
    pub snr_db: Option<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            upstream_per_room: SplitCounts {
                train: 128,
                val: 32,
                test: 32,
            },
            downstream_sizes: SplitCounts {
                train: 8192,
                val: 2048,
                test: 2048,
            },
            upstream_rooms: 64,
            downstream_rooms: 100,
            downstream_rirs_per_room: 10,
            segment_s: 4.0,
            scale: 1.0,
            snr_db: None,
        }
    }
}

impl DatasetConfig {
    pub fn segment_len(&self) -> usize {
        (self.segment_s * f64::from(crate::SAMPLE_RATE_HZ)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::Config(format!("scale {} not in (0, 1]", self.scale)));
        }
        if !(self.segment_s > 0.0) {
            return Err(Error::Config("segment duration must be positive".into()));
        }
        if self.upstream_rooms == 0 || self.downstream_rooms == 0 || self.downstream_rirs_per_room == 0 {
            return Err(Error::Config("room counts must be positive".into()));
        }
        Ok(())
    }
}

/// One (RIR, source) pairing with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub split: Split,
    pub room_id: String,
    pub rir_id: u32,
    pub source_id: String,
    pub rt60_s: f64,
    pub c50_db: f64,
    pub volume_m3: f64,
    pub volume_class: u8,
}

impl ManifestEntry {
    pub fn rir_key(&self) -> RirKey {
        RirKey {
            room_id: self.room_id.clone(),
            rir_id: self.rir_id,
        }
    }
}

/// Dataset-level metadata stored next to the entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub role: Role,
    pub seed: u64,
    pub scale: f64,
    pub segment_s: f64,
    pub sizes: SplitCounts,
    pub stft_window: String,
    pub stft_size: usize,
    pub stft_hop: usize,
    pub standardization: String,
    pub snr_db: Option<f64>,
}

/// Entries of all three splits plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub meta: DatasetMeta,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn room_ids(&self) -> std::collections::BTreeSet<String> {
        self.entries.iter().map(|e| e.room_id.clone()).collect()
    }

    /// Writes `manifest.jsonl` and `dataset.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_NAME);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let meta_path = dir.join(META_NAME);
        std::fs::write(&meta_path, serde_json::to_string_pretty(&self.meta)?)
            .map_err(|e| Error::io(&meta_path, e))
    }

    /// Reads a manifest directory written by [`DatasetManifest::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_NAME);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = serde_json::from_str(&text)?;
        let path = dir.join(MANIFEST_NAME);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.clone(),
                reason: format!("line {}: {e}", i + 1),
            })?);
        }
        Ok(Self { meta, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_boundary_is_exclusive() {
        assert_eq!(volume_class(160.0), 0);
        assert_eq!(volume_class(160.000001), 1);
        assert_eq!(volume_class(27.0), 0);
    }

    #[test]
    fn names_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        let err = "random".parse::<Strategy>().unwrap_err().to_string();
        assert!(err.contains("{soft,hard,pos-independent}"));
        for s in Split::ALL {
            assert_eq!(s.as_str().parse::<Split>().unwrap(), s);
        }
    }
}
