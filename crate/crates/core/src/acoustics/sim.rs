use serde::{Deserialize, Serialize};

use super::bands::merge_bands;
use super::decay::{compute_c50, eyring_rt60_per_band, estimate_rt60, schroeder_edc};
use super::ism::render_band_trains;
use super::room::{distance, Point, Room, MIN_CLEARANCE_M};
use crate::{Error, Result, SAMPLE_RATE_HZ, SPEED_OF_SOUND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub sample_rate_hz: u32,
    pub speed_of_sound: f64,
    /// Maximum total reflection order. `None` derives an order that covers
    /// every image arriving within the simulated duration.
    pub max_order: Option<u32>,
    /// Decay the simulated response should cover, dB below the onset.
    pub target_decay_db: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sample_rate_hz: SAMPLE_RATE_HZ,
            speed_of_sound: SPEED_OF_SOUND,
            max_order: None,
            target_decay_db: 60.0,
            min_duration_s: 0.1,
            max_duration_s: 1.0,
        }
    }
}

/// Simulated room impulse response with its geometry and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirRecord {
    pub room_id: String,
    pub rir_id: u32,
    pub sample_rate_hz: u32,
    pub dims: [f64; 3],
    pub materials: [String; 6],
    pub volume_m3: f64,
    pub source_pos: Point,
    pub mic_pos: Point,
    pub rt60_s: f64,
    pub c50_db: f64,
    pub c50_clamped: bool,
    /// Set when the duration cap stopped the response before the target
    /// decay; RT60 is then extrapolated from the available span.
    pub decay_truncated: bool,
    pub max_order: u32,
    pub num_samples: usize,
    #[serde(skip)]
    pub samples: Vec<f32>,
}

impl RirRecord {
    /// File name of the WAV holding this response.
    pub fn file_name(&self) -> String {
        format!("{}_{}.wav", self.room_id, self.rir_id)
    }

    pub fn key(&self) -> RirKey {
        RirKey {
            room_id: self.room_id.clone(),
            rir_id: self.rir_id,
        }
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&v| f64::from(v).powi(2)).sum()
    }

    pub fn expected_onset(&self) -> f64 {
        distance(&self.source_pos, &self.mic_pos) / SPEED_OF_SOUND * f64::from(self.sample_rate_hz)
    }
}

/// Globally unique identity of one RIR.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RirKey {
    pub room_id: String,
    pub rir_id: u32,
}

/// Impulse response before labelling.
#[derive(Debug, Clone)]
pub struct RenderedRir {
    pub samples: Vec<f32>,
    pub max_order: u32,
    pub image_count: usize,
    pub decay_truncated: bool,
}

/// Runs the band-wise image-source model and merges bands.
pub fn render_rir(room: &Room, source: &Point, mic: &Point, config: &SimConfig) -> Result<RenderedRir> {
    for p in [source, mic] {
        if room.boundary_distance(p) < MIN_CLEARANCE_M - 1e-9 {
            return Err(Error::Placement(format!(
                "{p:?} closer than {MIN_CLEARANCE_M} m to a wall of room {}",
                room.room_id
            )));
        }
    }
    let fs = f64::from(config.sample_rate_hz);
    let c = config.speed_of_sound;
    let direct_s = distance(source, mic) / c;
    let t_pred = eyring_rt60_per_band(room)
        .into_iter()
        .fold(0.0, f64::max);
    let needed = direct_s + t_pred * config.target_decay_db / 60.0;
    let duration = needed.clamp(config.min_duration_s, config.max_duration_s.max(direct_s + 0.01));
    let decay_truncated = needed > duration && config.max_order != Some(0);
    let len = (duration * fs).ceil() as usize + 1;

    let reach = (len - 1) as f64 / fs * c;
    let dims = room.dims();
    let auto_order = (reach * dims.iter().map(|d| 1.0 / d).sum::<f64>()).ceil() as u32 + 3;
    let max_order = config.max_order.unwrap_or(auto_order);

    let trains = render_band_trains(room, source, mic, max_order, len, fs, c);
    let merged = merge_bands(&trains.bands, fs);
    let samples: Vec<f32> = merged.into_iter().map(|v| v as f32).collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simulated RIR".into()));
    }
    Ok(RenderedRir {
        samples,
        max_order,
        image_count: trains.image_count,
        decay_truncated,
    })
}

/// Simulates one RIR and computes its RT60 / C50 labels.
pub fn simulate_rir(
    room: &Room,
    source: &Point,
    mic: &Point,
    rir_id: u32,
    config: &SimConfig,
) -> Result<RirRecord> {
    let rendered = render_rir(room, source, mic, config)?;
    let fs = f64::from(config.sample_rate_hz);
    let edc = schroeder_edc(&rendered.samples)?;
    let rt60_s = estimate_rt60(&edc, fs)?;
    let clarity = compute_c50(&rendered.samples, fs)?;
    if rendered.decay_truncated {
        log::warn!(
            "room {} rir {rir_id}: response capped at {:.2} s before {} dB decay; RT60 extrapolated",
            room.room_id,
            rendered.samples.len() as f64 / fs,
            config.target_decay_db
        );
    }
    Ok(RirRecord {
        room_id: room.room_id.clone(),
        rir_id,
        sample_rate_hz: config.sample_rate_hz,
        dims: room.dims(),
        materials: room.material_names(),
        volume_m3: room.volume(),
        source_pos: *source,
        mic_pos: *mic,
        rt60_s,
        c50_db: clarity.db,
        c50_clamped: clarity.clamped,
        decay_truncated: rendered.decay_truncated,
        max_order: rendered.max_order,
        num_samples: rendered.samples.len(),
        samples: rendered.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::{sabine_rt60, Material};

    fn uniform_room(dims: [f64; 3], alpha: f64) -> Room {
        let m = Material::uniform(format!("u{alpha}"), alpha).unwrap();
        Room::new("r", dims, std::array::from_fn(|_| m.clone())).unwrap()
    }

    #[test]
    fn free_field_is_single_impulse_at_direct_delay() {
        let room = uniform_room([8.0, 6.0, 4.0], 1.0);
        let src = [1.0, 3.0, 2.0];
        let mic = [1.0 + 3.43, 3.0, 2.0];
        let cfg = SimConfig {
            max_order: Some(0),
            ..SimConfig::default()
        };
        let r = render_rir(&room, &src, &mic, &cfg).unwrap();
        let peak = r
            .samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        assert_eq!(peak.0, 160);
        let amp = 1.0 / (4.0 * std::f64::consts::PI * 3.43);
        // The band bank removes content below the lowest band, which leaves
        // a faint low-frequency skirt around the impulse.
        assert!((f64::from(*peak.1) / amp - 1.0).abs() < 0.02);
        let total: f64 = r.samples.iter().map(|&v| f64::from(v).powi(2)).sum();
        let off_peak = total - f64::from(*peak.1).powi(2);
        assert!(off_peak / total < 0.01, "{}", off_peak / total);
    }

    #[test]
    fn fully_absorbing_walls_leave_only_direct_sound() {
        let room = uniform_room([8.0, 6.0, 4.0], 1.0);
        let r = render_rir(&room, &[2.0, 2.0, 2.0], &[5.0, 4.0, 2.0], &SimConfig::default()).unwrap();
        let energy: f64 = r.samples.iter().map(|&v| f64::from(v).powi(2)).sum();
        let d = distance(&[2.0, 2.0, 2.0], &[5.0, 4.0, 2.0]);
        let direct = (1.0 / (4.0 * std::f64::consts::PI * d)).powi(2);
        // The sinc kernel of a fractional delay carries unit energy up to
        // truncation of its window.
        assert!((energy / direct - 1.0).abs() < 0.02, "{}", energy / direct);
    }

    #[test]
    fn onset_is_at_direct_path_delay() {
        let t = crate::acoustics::MaterialTable::builtin();
        let mats: [Material; 6] = std::array::from_fn(|i| t.materials[(i * 5) % 12].clone());
        let room = Room::new("r", [6.1, 4.3, 3.2], mats).unwrap();
        let src = [1.3, 1.1, 1.7];
        let mic = [4.4, 2.9, 1.2];
        let rec = simulate_rir(&room, &src, &mic, 0, &SimConfig::default()).unwrap();
        let expected = rec.expected_onset();
        let lo = expected.floor() as usize - 5;
        let local_peak = (lo..lo + 11)
            .max_by(|&a, &b| rec.samples[a].abs().total_cmp(&rec.samples[b].abs()))
            .unwrap();
        assert!((local_peak as f64 - expected.round()).abs() <= 1.0);
        assert!(rec.energy() > 0.0 && rec.energy().is_finite());
        assert!(rec.rt60_s > 0.05 && rec.rt60_s < 5.0);
    }

    #[test]
    fn simulated_rt60_tracks_sabine() {
        for (dims, alpha) in [([5.0, 4.0, 3.0], 0.3), ([6.0, 5.0, 3.5], 0.4)] {
            let room = uniform_room(dims, alpha);
            let rec = simulate_rir(&room, &[1.2, 1.5, 1.3], &[3.6, 2.7, 1.8], 0, &SimConfig::default()).unwrap();
            let sabine = sabine_rt60(&room).unwrap();
            let rel = (rec.rt60_s - sabine).abs() / sabine;
            assert!(rel < 0.3, "alpha {alpha}: simulated {} vs sabine {sabine}", rec.rt60_s);
        }
    }
}
