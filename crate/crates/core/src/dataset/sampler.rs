use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{DatasetManifest, Split, Strategy};
use crate::acoustics::RirKey;
use crate::{Error, Result};

/// Attempts at drawing a source not yet used within a class.
pub const MAX_REDRAWS: usize = 100;

/// One view of a multiview batch: an (RIR, source) pairing and its class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct View {
    pub class_label: i64,
    pub room_id: String,
    pub rir_id: u32,
    pub source_id: String,
}

impl View {
    pub fn rir_key(&self) -> RirKey {
        RirKey {
            room_id: self.room_id.clone(),
            rir_id: self.rir_id,
        }
    }
}

/// The pairings of one batch, class-major: views `i*M .. (i+1)*M` belong
/// to class `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub strategy: Strategy,
    pub n: usize,
    pub m: usize,
    pub views: Vec<View>,
}

impl BatchPlan {
    pub fn class_labels(&self) -> Vec<i64> {
        self.views.iter().map(|v| v.class_label).collect()
    }
}

/// RIRs, rooms and source segments of one manifest split.
#[derive(Debug)]
pub struct SplitPool {
    pub split: Split,
    /// Distinct RIRs, sorted.
    pub rirs: Vec<RirKey>,
    /// Rooms with the indices (into `rirs`) of their RIRs.
    pub rooms: Vec<(String, Vec<usize>)>,
    /// Distinct source segments of the split, sorted.
    pub sources: Vec<String>,
    warned: AtomicBool,
}

impl SplitPool {
    pub fn new(manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let mut rirs: Vec<RirKey> = manifest.split(split).map(|e| e.rir_key()).collect();
        rirs.sort();
        rirs.dedup();
        let mut sources: Vec<String> = manifest.split(split).map(|e| e.source_id.clone()).collect();
        sources.sort();
        sources.dedup();
        if rirs.is_empty() {
            return Err(Error::Sampling(format!("split {split} is empty")));
        }
        let mut rooms: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, k) in rirs.iter().enumerate() {
            rooms.entry(k.room_id.clone()).or_default().push(i);
        }
        Ok(Self {
            split,
            rirs,
            rooms: rooms.into_iter().collect(),
            sources,
            warned: AtomicBool::new(false),
        })
    }

    /// Number of classes available under `strategy`.
    pub fn classes(&self, strategy: Strategy) -> usize {
        match strategy {
            Strategy::Soft | Strategy::Hard => self.rirs.len(),
            Strategy::PosIndependent => self.rooms.len(),
        }
    }
}

/// Draws `m` distinct sources, re-drawing duplicates up to [`MAX_REDRAWS`]
/// times in total.
fn distinct_sources<R: Rng + ?Sized>(pool: &[String], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let mut redraws = 0;
    while chosen.len() < m {
        let s = rng.gen_range(0..pool.len());
        if chosen.contains(&s) {
            redraws += 1;
            if redraws > MAX_REDRAWS {
                return Err(Error::Sampling(format!(
                    "no {m} distinct sources after {MAX_REDRAWS} re-draws (pool of {})",
                    pool.len()
                )));
            }
            continue;
        }
        chosen.push(s);
    }
    Ok(chosen)
}

/// Plans one multiview batch of `n` classes with `m` views each.
///
/// Soft and hard treat every RIR as a class; hard draws a single set of `m`
/// sources shared by all classes. Position-independent treats every room
/// as a class and gives each view a random RIR of that room.
pub fn sample_batch<R: Rng + ?Sized>(
    pool: &SplitPool,
    strategy: Strategy,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<BatchPlan> {
    if n == 0 || m == 0 {
        return Err(Error::Sampling(format!("N={n} and M={m} must be positive")));
    }
    let available = pool.classes(strategy);
    if n > available {
        return Err(Error::Sampling(format!(
            "N={n} exceeds the {available} classes of split {} under {strategy} sampling",
            pool.split
        )));
    }
    if m > pool.sources.len() {
        return Err(Error::Sampling(format!(
            "M={m} exceeds the {} source segments of split {}",
            pool.sources.len(),
            pool.split
        )));
    }
    if strategy == Strategy::PosIndependent {
        let single = pool.rooms.iter().filter(|(_, r)| r.len() < 2).count();
        if single == pool.rooms.len() {
            return Err(Error::Sampling(
                "position-independent sampling needs rooms with at least 2 RIRs; every room has 1".into(),
            ));
        }
        if single > 0 && !pool.warned.swap(true, Ordering::Relaxed) {
            log::warn!("{single} of {} rooms have a single RIR", pool.rooms.len());
        }
    }

    let classes = index::sample(rng, available, n).into_vec();
    let mut views = Vec::with_capacity(n * m);
    let shared = match strategy {
        Strategy::Hard => Some(distinct_sources(&pool.sources, m, rng)?),
        _ => None,
    };
    for &c in &classes {
        let sources = match &shared {
            Some(s) => s.clone(),
            None => distinct_sources(&pool.sources, m, rng)?,
        };
        for s in sources {
            let rir = match strategy {
                Strategy::Soft | Strategy::Hard => &pool.rirs[c],
                Strategy::PosIndependent => &pool.rirs[*pool.rooms[c].1.choose(rng).expect("rooms are non-empty")],
            };
            views.push(View {
                class_label: c as i64,
                room_id: rir.room_id.clone(),
                rir_id: rir.rir_id,
                source_id: pool.sources[s].clone(),
            });
        }
    }
    Ok(BatchPlan { strategy, n, m, views })
}
