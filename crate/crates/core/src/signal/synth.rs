//! Corpus-free, speech-like excitation for tests and desk-scale runs.
//!
//! Voiced stretches are glottal pulse trains (80-300 Hz, slowly gliding)
//! shaped by a spectral tilt and three random formant resonators; unvoiced
//! stretches are resonant noise bursts; pauses are silent.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;

use super::{SourceOrigin, SourceSegment};
use crate::SAMPLE_RATE_HZ;

const TARGET_RMS: f64 = 0.1;

struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, fs: f64) -> Self {
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        Resonator {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn envelope(i: usize, n: usize) -> f64 {
    let ramp = (n / 8).max(1);
    if i < ramp {
        0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
    } else if i + ramp > n {
        0.5 - 0.5 * (PI * (n - i) as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

fn voiced<R: Rng + ?Sized>(rng: &mut R, n: usize, fs: f64, out: &mut Vec<f64>) {
    let f0_start = rng.gen_range(80.0..300.0);
    let f0_end = (f0_start * rng.gen_range(0.8..1.2f64)).clamp(80.0, 300.0);
    let formants = [
        (rng.gen_range(300.0..900.0), rng.gen_range(60.0..200.0)),
        (rng.gen_range(900.0..2500.0), rng.gen_range(60.0..200.0)),
        (rng.gen_range(2000.0..3500.0), rng.gen_range(60.0..200.0)),
    ];
    let mut res: Vec<Resonator> = formants.iter().map(|&(f, b)| Resonator::new(f, b, fs)).collect();
    let amp = rng.gen_range(0.5..1.0);
    let mut phase = 0.0;
    let mut tilt = 0.0;
    for i in 0..n {
        let f0 = f0_start + (f0_end - f0_start) * i as f64 / n as f64;
        phase += f0 / fs;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        // Glottal spectral tilt.
        tilt = 0.95 * tilt + pulse;
        let mut y = tilt;
        for r in &mut res {
            y = r.tick(y) * 4.0;
        }
        out.push(amp * envelope(i, n) * y);
    }
}

fn unvoiced<R: Rng + ?Sized>(rng: &mut R, n: usize, fs: f64, out: &mut Vec<f64>) {
    let mut res = Resonator::new(rng.gen_range(1500.0..4500.0), rng.gen_range(500.0..1500.0), fs);
    let amp = rng.gen_range(0.05..0.2);
    for i in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        out.push(amp * envelope(i, n) * res.tick(w) * 3.0);
    }
}

/// Generates `duration_s` seconds of speech-like signal at 16 kHz,
/// normalised to an RMS of 0.1.
pub fn synth_source<R: Rng + ?Sized>(rng: &mut R, duration_s: f64, source_id: impl Into<String>, seed: u64) -> SourceSegment {
    assert!(duration_s > 0.0, "duration must be positive");
    let fs = f64::from(SAMPLE_RATE_HZ);
    let total = (duration_s * fs).round() as usize;
    let mut buf: Vec<f64> = Vec::with_capacity(total + 8000);
    let ms = |rng: &mut R, lo: f64, hi: f64| ((rng.gen_range(lo..hi) * fs / 1000.0) as usize).max(1);
    let mut first = true;
    while buf.len() < total {
        let kind: f64 = if first { 0.0 } else { rng.gen() };
        first = false;
        if kind < 0.55 {
            let n = ms(rng, 80.0, 300.0);
            voiced(rng, n, fs, &mut buf);
        } else if kind < 0.75 {
            let n = ms(rng, 30.0, 120.0);
            unvoiced(rng, n, fs, &mut buf);
        } else {
            let n = ms(rng, 30.0, 200.0);
            buf.extend(std::iter::repeat(0.0).take(n));
        }
    }
    buf.truncate(total);
    let rms = (buf.iter().map(|v| v * v).sum::<f64>() / total.max(1) as f64).sqrt();
    let scale = if rms > 0.0 { TARGET_RMS / rms } else { 0.0 };
    SourceSegment {
        source_id: source_id.into(),
        samples: buf.iter().map(|v| (v * scale) as f32).collect(),
        sample_rate_hz: SAMPLE_RATE_HZ,
        origin: SourceOrigin::Synthetic { seed },
    }
}

/// Power-weighted mean frequency of `x`, Hz.
pub fn spectral_centroid(x: &[f32], sample_rate: f64) -> f64 {
    let n = x.len().next_power_of_two();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
    let mut input = fft.make_input_vec();
    for (d, &s) in input.iter_mut().zip(x) {
        *d = f64::from(s);
    }
    let mut spec = fft.make_output_vec();
    fft.process(&mut input, &mut spec).expect("fft sizes match");
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in spec.iter().enumerate() {
        let p = c.norm_sqr();
        num += p * k as f64 * sample_rate / n as f64;
        den += p;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}
