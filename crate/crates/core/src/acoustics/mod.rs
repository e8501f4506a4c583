//! Shoebox room sampling, image-source RIR simulation and ground truth.

mod bands;
mod decay;
pub mod ism;
mod material;
mod room;
mod sim;
pub mod store;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bands::{band_edges, band_gain, merge_bands};
pub use decay::{
    compute_c50, detect_onset, estimate_rt60, eyring_rt60_per_band, sabine_formula, sabine_rt60,
    schroeder_edc, Clarity, C50_CLAMP_DB, FIT_END_DB, FIT_START_DB,
};
pub use material::{Material, MaterialTable, BAND_CENTERS_HZ, NUM_BANDS};
pub use room::{distance, place_endpoints, sample_room, Point, Room, RoomRanges, MIN_CLEARANCE_M};
pub use sim::{render_rir, simulate_rir, RenderedRir, RirKey, RirRecord, SimConfig};

use crate::rng::{substream, Stream};
use crate::Result;

/// Settings for generating a whole RIR store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticsConfig {
    pub ranges: RoomRanges,
    pub sim: SimConfig,
    /// Optional path of a material table replacing the builtin one.
    pub material_table: Option<std::path::PathBuf>,
}

impl Default for AcousticsConfig {
    fn default() -> Self {
        AcousticsConfig {
            ranges: RoomRanges::default(),
            sim: SimConfig::default(),
            material_table: None,
        }
    }
}

/// Generates `rooms` random rooms with `rirs_per_room` random source /
/// microphone placements each. Room ids are `<prefix>r<index>`; each room
/// draws from its own sub-stream so the result is independent of thread
/// scheduling.
pub fn generate_rirs(
    table: &MaterialTable,
    config: &AcousticsConfig,
    rooms: usize,
    rirs_per_room: usize,
    seed: u64,
    prefix: &str,
) -> Result<Vec<RirRecord>> {
    let per_room: Vec<Result<Vec<RirRecord>>> = (0..rooms)
        .into_par_iter()
        .map(|i| {
            let mut room_rng = substream(seed, Stream::Rooms, i as u64);
            let mut place_rng = substream(seed, Stream::Placement, i as u64);
            let room = sample_room(&mut room_rng, &config.ranges, table, format!("{prefix}r{i:04}"))?;
            (0..rirs_per_room)
                .map(|k| {
                    let (s, m) = place_endpoints(&room, &mut place_rng)?;
                    simulate_rir(&room, &s, &m, k as u32, &config.sim)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(rooms * rirs_per_room);
    for r in per_room {
        out.extend(r?);
    }
    Ok(out)
}
