//! Energy decay, reverberation time and clarity.

use serde::{Deserialize, Serialize};

use super::room::Room;
use crate::{Error, Result};

/// Schroeder backward-integrated energy decay curve in dB, normalised so
/// that the first value is 0 dB. Samples after the last non-zero sample are
/// `-inf`.
pub fn schroeder_edc(h: &[f32]) -> Result<Vec<f64>> {
    let mut tail = vec![0.0f64; h.len()];
    let mut acc = 0.0f64;
    for (t, &x) in h.iter().enumerate().rev() {
        acc += f64::from(x) * f64::from(x);
        tail[t] = acc;
    }
    let total = acc;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroEnergy);
    }
    Ok(tail
        .into_iter()
        .map(|e| {
            if e > 0.0 {
                (10.0 * (e / total).log10()).min(0.0)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect())
}

/// Upper and lower end of the EDC span used for the RT60 line fit, dB.
pub const FIT_START_DB: f64 = -5.0;
pub const FIT_END_DB: f64 = -25.0;

/// Reverberation time from an EDC by least-squares fitting a line to the
/// `[-5, -25]` dB portion and extrapolating to 60 dB of decay.
pub fn estimate_rt60(edc: &[f64], sample_rate: f64) -> Result<f64> {
    let reached = edc
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::min);
    if reached > FIT_END_DB {
        return Err(Error::InsufficientDecay {
            reached_db: reached,
            needed_db: FIT_END_DB,
        });
    }
    let start = edc
        .iter()
        .position(|&v| v <= FIT_START_DB)
        .expect("decay passes the start level");
    let end = edc
        .iter()
        .rposition(|&v| v.is_finite() && v >= FIT_END_DB)
        .unwrap_or(start);
    let points: Vec<(f64, f64)> = (start..=end.max(start))
        .filter(|&t| edc[t].is_finite())
        .map(|t| (t as f64, edc[t]))
        .collect();
    if points.len() < 2 {
        return Err(Error::InsufficientDecay {
            reached_db: reached,
            needed_db: FIT_END_DB,
        });
    }
    let slope = fit_slope(&points);
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay {
            reached_db: reached,
            needed_db: FIT_END_DB,
        });
    }
    Ok(-60.0 / slope / sample_rate)
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Clarity limit applied when one side of the energy ratio vanishes.
pub const C50_CLAMP_DB: f64 = 100.0;

/// Onset threshold relative to the absolute peak, dB.
pub const ONSET_THRESHOLD_DB: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clarity {
    pub db: f64,
    pub clamped: bool,
}

/// Index of the first sample whose magnitude is within 20 dB of the peak.
pub fn detect_onset(h: &[f32]) -> Result<usize> {
    let peak = h.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if !(peak > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let threshold = peak * 10f32.powf(ONSET_THRESHOLD_DB as f32 / 20.0);
    Ok(h.iter().position(|v| v.abs() >= threshold).unwrap_or(0))
}

/// Clarity index C50: early (first 50 ms after the direct sound) to late
/// energy ratio in dB, clamped to +/-100 dB.
pub fn compute_c50(h: &[f32], sample_rate: f64) -> Result<Clarity> {
    let onset = detect_onset(h)?;
    let boundary = onset + (0.05 * sample_rate).round() as usize;
    let energy = |s: &[f32]| s.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>();
    let split = boundary.min(h.len());
    let early = energy(&h[..split]);
    let late = energy(&h[split..]);
    if late == 0.0 {
        return Ok(Clarity {
            db: C50_CLAMP_DB,
            clamped: true,
        });
    }
    let db = 10.0 * (early / late).log10();
    if db.abs() > C50_CLAMP_DB {
        Ok(Clarity {
            db: db.clamp(-C50_CLAMP_DB, C50_CLAMP_DB),
            clamped: true,
        })
    } else {
        Ok(Clarity { db, clamped: false })
    }
}

/// Sabine reverberation time `0.161 V / (S alpha)`.
pub fn sabine_formula(volume: f64, area: f64, mean_alpha: f64) -> Result<f64> {
    if mean_alpha >= 0.999 {
        return Err(Error::OverAbsorptive(mean_alpha));
    }
    Ok(0.161 * volume / (area * mean_alpha))
}

/// Sabine reverberation time with the area-weighted, band-averaged
/// absorption of the room.
pub fn sabine_rt60(room: &Room) -> Result<f64> {
    let per_band = room.mean_absorption_per_band();
    let mean = per_band.iter().sum::<f64>() / per_band.len() as f64;
    sabine_formula(room.volume(), room.surface_area(), mean)
}

/// Eyring reverberation time per band, the statistical decay the
/// image-source model follows. Used to size the simulated response.
pub fn eyring_rt60_per_band(room: &Room) -> [f64; 6] {
    let (v, s) = (room.volume(), room.surface_area());
    room.mean_absorption_per_band().map(|a| {
        let a = a.min(0.999_999);
        0.161 * v / (-s * (1.0 - a).ln())
    })
}
