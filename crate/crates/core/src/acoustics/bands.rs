//! Zero-phase octave filter bank used to merge per-band impulse trains.
//!
//! Band responses are differences of 4th-order Butterworth low-pass power
//! responses `1 / (1 + (f / fc)^8)` at the geometric band edges, so they are
//! real, non-negative and sum to exactly one at every frequency.

use realfft::num_complex::Complex;
use realfft::RealFftPlanner;

use super::material::{BAND_CENTERS_HZ, NUM_BANDS};

const ORDER: i32 = 4;

/// Lower edge of the 125 Hz band. Content below it (including the DC
/// build-up of all-positive image trains) is removed.
pub const LOWEST_EDGE_HZ: f64 = 125.0 / std::f64::consts::SQRT_2;

fn lowpass_power(f: f64, cutoff: f64) -> f64 {
    1.0 / (1.0 + (f / cutoff).powi(2 * ORDER))
}

/// Band edges between consecutive centre frequencies.
pub fn band_edges() -> [f64; NUM_BANDS - 1] {
    std::array::from_fn(|i| (BAND_CENTERS_HZ[i] * BAND_CENTERS_HZ[i + 1]).sqrt())
}

/// Magnitude response of band `b` at frequency `f`.
pub fn band_gain(b: usize, f: f64) -> f64 {
    let edges = band_edges();
    let upper = if b + 1 < NUM_BANDS {
        lowpass_power(f, edges[b])
    } else {
        1.0
    };
    let lower = if b > 0 {
        lowpass_power(f, edges[b - 1])
    } else {
        lowpass_power(f, LOWEST_EDGE_HZ)
    };
    upper - lower
}

/// Filters every band buffer with its band response and sums them.
/// All buffers must share one length; the output has that length.
pub fn merge_bands(bands: &[Vec<f64>; NUM_BANDS], sample_rate: f64) -> Vec<f64> {
    let len = bands[0].len();
    if len == 0 {
        return Vec::new();
    }
    // Room for the non-causal filter tails so they do not wrap into [0, len).
    let nfft = (2 * len).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let bins = nfft / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate / nfft as f64)
        .collect();

    let mut acc = vec![Complex::new(0.0, 0.0); bins];
    let mut spec = fwd.make_output_vec();
    let mut input = fwd.make_input_vec();
    for (b, band) in bands.iter().enumerate() {
        if band.iter().all(|v| *v == 0.0) {
            continue;
        }
        input[..len].copy_from_slice(band);
        input[len..].iter_mut().for_each(|v| *v = 0.0);
        fwd.process(&mut input, &mut spec).expect("fft sizes match");
        for ((a, c), &f) in acc.iter_mut().zip(&spec).zip(&freqs) {
            *a += c * band_gain(b, f);
        }
    }
    // The inverse transform requires purely real DC and Nyquist bins.
    acc[0].im = 0.0;
    acc[bins - 1].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut acc, &mut out).expect("fft sizes match");
    let scale = 1.0 / nfft as f64;
    out.truncate(len);
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_sum_to_one_and_are_non_negative() {
        for f in [0.0, 50.0, 125.0, 300.0, 1000.0, 2828.0, 5000.0, 8000.0] {
            let gains: Vec<f64> = (0..NUM_BANDS).map(|b| band_gain(b, f)).collect();
            assert!(gains.iter().all(|g| *g >= 0.0));
            let total = 1.0 - lowpass_power(f, LOWEST_EDGE_HZ);
            assert!((gains.iter().sum::<f64>() - total).abs() < 1e-12);
            if f >= 250.0 {
                assert!((total - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn band_peaks_at_its_centre() {
        for b in 0..NUM_BANDS {
            let g = band_gain(b, BAND_CENTERS_HZ[b]);
            for o in 0..NUM_BANDS {
                if o != b {
                    assert!(g > band_gain(o, BAND_CENTERS_HZ[b]));
                }
            }
        }
    }

    #[test]
    fn identical_bands_pass_mid_frequencies_unchanged() {
        let x: Vec<f64> = (0..4000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        let bands = std::array::from_fn(|_| x.clone());
        let y = merge_bands(&bands, 16000.0);
        for (a, b) in x.iter().zip(&y).skip(1000).take(2000) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn dc_offset_is_removed() {
        let x = vec![1.0; 8000];
        let bands = std::array::from_fn(|_| x.clone());
        let y = merge_bands(&bands, 16000.0);
        let mid = y[2000..6000].iter().sum::<f64>() / 4000.0;
        assert!(mid.abs() < 1e-3, "{mid}");
    }
}
