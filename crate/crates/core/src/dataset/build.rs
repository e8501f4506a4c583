use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{
    volume_class, DatasetConfig, DatasetManifest, DatasetMeta, ManifestEntry, Role, SourceCorpus, Split,
    SplitCounts,
};
use crate::acoustics::RirRecord;
use crate::rng::{substream, Stream};
use crate::signal::{FFT_SIZE, HOP_SIZE};
use crate::{Error, Result};

/// `round(n * scale)`, never below 1 for a non-empty split.
pub fn scaled_count(n: usize, scale: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((n as f64 * scale).round() as usize).max(1)
}

fn group_by_room(rirs: &[RirRecord]) -> BTreeMap<&str, Vec<&RirRecord>> {
    let mut rooms: BTreeMap<&str, Vec<&RirRecord>> = BTreeMap::new();
    for r in rirs {
        rooms.entry(r.room_id.as_str()).or_default().push(r);
    }
    for list in rooms.values_mut() {
        list.sort_by_key(|r| r.rir_id);
    }
    rooms
}

fn entry(role: Role, split: Split, index: usize, rir: &RirRecord, source_id: &str) -> ManifestEntry {
    let tag = match role {
        Role::Upstream => "up",
        Role::Downstream => "down",
    };
    ManifestEntry {
        sample_id: format!("{tag}-{split}-{index:06}"),
        split,
        room_id: rir.room_id.clone(),
        rir_id: rir.rir_id,
        source_id: source_id.to_owned(),
        rt60_s: rir.rt60_s,
        c50_db: rir.c50_db,
        volume_m3: rir.volume_m3,
        volume_class: volume_class(rir.volume_m3),
    }
}

fn meta(role: Role, seed: u64, config: &DatasetConfig, sizes: SplitCounts) -> DatasetMeta {
    DatasetMeta {
        role,
        seed,
        scale: config.scale,
        segment_s: config.segment_s,
        sizes,
        stft_window: "hann-periodic".into(),
        stft_size: FFT_SIZE,
        stft_hop: HOP_SIZE,
        standardization: "per-sample".into(),
        snr_db: config.snr_db,
    }
}

fn check_segment_length(corpus: &SourceCorpus, config: &DatasetConfig) -> Result<()> {
    let want = config.segment_len();
    if let Some(s) = corpus.segments().iter().find(|s| s.num_samples != want) {
        return Err(Error::Config(format!(
            "source {} has {} samples, dataset expects {want}",
            s.source_id, s.num_samples
        )));
    }
    Ok(())
}

/// Splits `total` as evenly as possible over `parts`, earlier parts first.
fn distribute(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Pairs every upstream room with its own random draw of source segments
/// per split. Within a room the entries cycle through the room's RIRs.
/// Split totals are `round(rooms * per_room * scale)`.
pub fn build_upstream(
    rirs: &[RirRecord],
    corpus: &SourceCorpus,
    config: &DatasetConfig,
    seed: u64,
) -> Result<DatasetManifest> {
    config.validate()?;
    check_segment_length(corpus, config)?;
    let rooms = group_by_room(rirs);
    if rooms.len() < config.upstream_rooms {
        return Err(Error::Config(format!(
            "upstream needs {} rooms, RIR store has {}",
            config.upstream_rooms,
            rooms.len()
        )));
    }
    let rooms: Vec<(&str, Vec<&RirRecord>)> = rooms.into_iter().take(config.upstream_rooms).collect();
    if rooms.iter().all(|(_, r)| r.len() < 2) {
        log::warn!("every upstream room has a single RIR; position-independent sampling will fail");
    }

    let mut sizes = SplitCounts { train: 0, val: 0, test: 0 };
    let mut per_split = Vec::new();
    for split in Split::ALL {
        let total = scaled_count(config.upstream_per_room.get(split) * rooms.len(), config.scale);
        let counts = distribute(total, rooms.len());
        let need = counts.iter().copied().max().unwrap_or(0);
        let have = corpus.ids(split).len();
        if have < need {
            return Err(Error::InsufficientCorpus(format!(
                "{split} split needs {need} distinct source segments per room ({total} pairings over {} rooms), corpus has {have}",
                rooms.len()
            )));
        }
        match split {
            Split::Train => sizes.train = total,
            Split::Val => sizes.val = total,
            Split::Test => sizes.test = total,
        }
        per_split.push((split, counts));
    }

    let mut entries = Vec::with_capacity(sizes.total());
    for (split, counts) in per_split {
        let pool = corpus.ids(split);
        let mut index = 0;
        for (r, ((_, room_rirs), &count)) in rooms.iter().zip(&counts).enumerate() {
            let mut rng = substream(seed, Stream::Pairing, (split as u64) << 32 | r as u64);
            let chosen: Vec<&&str> = pool.choose_multiple(&mut rng, count).collect();
            for (j, source) in chosen.into_iter().enumerate() {
                entries.push(entry(Role::Upstream, split, index, room_rirs[j % room_rirs.len()], source));
                index += 1;
            }
        }
    }
    Ok(DatasetManifest {
        meta: meta(Role::Upstream, seed, config, sizes),
        entries,
    })
}

/// Draws every downstream entry from a uniformly random RIR of the
/// downstream pool. Sources are used without repetition while the split's
/// pool lasts, then cycled in a fresh order.
pub fn build_downstream(
    rirs: &[RirRecord],
    corpus: &SourceCorpus,
    config: &DatasetConfig,
    seed: u64,
    upstream_rooms: &BTreeSet<String>,
) -> Result<DatasetManifest> {
    config.validate()?;
    check_segment_length(corpus, config)?;
    let rooms = group_by_room(rirs);
    let shared: Vec<&&str> = rooms.keys().filter(|r| upstream_rooms.contains(**r)).collect();
    if let Some(first) = shared.first() {
        return Err(Error::RoomOverlap(shared.len(), (**first).to_owned()));
    }
    if rooms.len() < config.downstream_rooms {
        return Err(Error::Config(format!(
            "downstream needs {} rooms, RIR store has {}",
            config.downstream_rooms,
            rooms.len()
        )));
    }
    let pool: Vec<&RirRecord> = rooms
        .into_values()
        .take(config.downstream_rooms)
        .flat_map(|list| list.into_iter().take(config.downstream_rirs_per_room))
        .collect();

    let sizes = SplitCounts {
        train: scaled_count(config.downstream_sizes.train, config.scale),
        val: scaled_count(config.downstream_sizes.val, config.scale),
        test: scaled_count(config.downstream_sizes.test, config.scale),
    };
    let mut entries = Vec::with_capacity(sizes.total());
    for split in Split::ALL {
        let n = sizes.get(split);
        let sources = corpus.ids(split);
        if sources.is_empty() && n > 0 {
            return Err(Error::InsufficientCorpus(format!(
                "{split} split needs source segments ({n} entries), corpus has none"
            )));
        }
        if sources.len() < n {
            log::warn!("{split}: {n} entries share {} source segments", sources.len());
        }
        let mut rir_rng = substream(seed, Stream::Downstream, split as u64);
        let mut src_rng = substream(seed, Stream::Pairing, split as u64);
        let mut order: Vec<&str> = Vec::new();
        for i in 0..n {
            if order.is_empty() {
                order = sources.clone();
                order.shuffle(&mut src_rng);
                order.reverse();
            }
            let source = order.pop().expect("refilled above");
            let rir = pool[rir_rng.gen_range(0..pool.len())];
            entries.push(entry(Role::Downstream, split, i, rir, source));
        }
    }
    Ok(DatasetManifest {
        meta: meta(Role::Downstream, seed, config, sizes),
        entries,
    })
}
