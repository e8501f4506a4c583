#![allow(dead_code)]

use std::collections::BTreeSet;

use roomembed::acoustics::{generate_rirs, AcousticsConfig};
use roomembed::dataset::{build_downstream, build_upstream, DatasetConfig, SourceCorpus, SplitCounts};
use roomembed::trainer::DataSources;
use roomembed::{DatasetManifest, MaterialTable, RirRecord, TrainConfig};

/// A small upstream/downstream setup that trains in seconds.
pub struct Fixture {
    pub up_rirs: Vec<RirRecord>,
    pub down_rirs: Vec<RirRecord>,
    pub corpus: SourceCorpus,
    pub up: DatasetManifest,
    pub down: DatasetManifest,
    pub dataset: DatasetConfig,
}

impl Fixture {
    pub fn new(up_rirs_per_room: usize) -> Self {
        let mut acoustics = AcousticsConfig::default();
        acoustics.sim.max_duration_s = 0.25;
        let table = MaterialTable::builtin();
        let up_rirs = generate_rirs(&table, &acoustics, 8, up_rirs_per_room, 11, "up-").unwrap();
        let down_rirs = generate_rirs(&table, &acoustics, 6, 4, 12, "dn-").unwrap();
        let dataset = DatasetConfig {
            upstream_per_room: SplitCounts { train: 4, val: 2, test: 2 },
            downstream_sizes: SplitCounts { train: 32, val: 16, test: 16 },
            upstream_rooms: 8,
            downstream_rooms: 6,
            downstream_rirs_per_room: 4,
            segment_s: 0.5,
            scale: 1.0,
            snr_db: None,
        };
        let corpus = SourceCorpus::synthetic(
            SplitCounts { train: 32, val: 16, test: 16 },
            dataset.segment_len(),
            3,
            "syn",
        );
        let up = build_upstream(&up_rirs, &corpus, &dataset, 4).unwrap();
        let rooms: BTreeSet<String> = up.room_ids();
        let down = build_downstream(&down_rirs, &corpus, &dataset, 5, &rooms).unwrap();
        Self { up_rirs, down_rirs, corpus, up, down, dataset }
    }

    pub fn upstream(&self) -> DataSources<'_> {
        DataSources { manifest: &self.up, rirs: &self.up_rirs, corpus: &self.corpus }
    }

    pub fn downstream(&self) -> DataSources<'_> {
        DataSources { manifest: &self.down, rirs: &self.down_rirs, corpus: &self.corpus }
    }
}

pub fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        n: 6,
        m: 2,
        batches_per_epoch: 6,
        val_batches: 2,
        max_epochs: 6,
        downstream_batch: 8,
        ..TrainConfig::default()
    }
}
