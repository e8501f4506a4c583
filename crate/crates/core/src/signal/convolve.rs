use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::{ReverberantSample, SourceSegment};
use crate::acoustics::RirRecord;
use crate::{Error, Result};

/// Linear convolution by real FFT at a fixed transform size.
///
/// Spectra of kernels can be computed once with [`FftConvolver::spectrum`]
/// and reused for many signals.
#[derive(Clone)]
pub struct FftConvolver {
    nfft: usize,
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for FftConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftConvolver").field("nfft", &self.nfft).finish()
    }
}

impl FftConvolver {
    /// Transform size large enough for signals of `max_signal` samples and
    /// kernels of `max_kernel` samples, with the output truncated to the
    /// signal length.
    pub fn new(max_signal: usize, max_kernel: usize) -> Self {
        // Truncated output only needs the first `max_signal` samples free of
        // circular aliasing: nfft >= max_signal + max_kernel - 1.
        let nfft = (max_signal + max_kernel).max(2).next_power_of_two();
        let mut planner = RealFftPlanner::<f64>::new();
        FftConvolver {
            nfft,
            fwd: planner.plan_fft_forward(nfft),
            inv: planner.plan_fft_inverse(nfft),
        }
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn spectrum(&self, x: &[f32]) -> Vec<Complex<f64>> {
        assert!(x.len() <= self.nfft, "signal longer than transform");
        let mut input = self.fwd.make_input_vec();
        for (d, &s) in input.iter_mut().zip(x) {
            *d = f64::from(s);
        }
        let mut out = self.fwd.make_output_vec();
        self.fwd.process(&mut input, &mut out).expect("fft sizes match");
        out
    }

    /// Convolves `x` with the kernel whose spectrum is `kernel`, returning
    /// the first `x.len()` output samples.
    pub fn convolve_with(&self, x: &[f32], kernel: &[Complex<f64>]) -> Vec<f32> {
        let mut spec = self.spectrum(x);
        for (a, b) in spec.iter_mut().zip(kernel) {
            *a *= b;
        }
        let n = spec.len();
        spec[0].im = 0.0;
        spec[n - 1].im = 0.0;
        let mut out = self.inv.make_output_vec();
        self.inv.process(&mut spec, &mut out).expect("fft sizes match");
        let scale = 1.0 / self.nfft as f64;
        out[..x.len()].iter().map(|v| (v * scale) as f32).collect()
    }

    pub fn convolve(&self, x: &[f32], h: &[f32]) -> Vec<f32> {
        self.convolve_with(x, &self.spectrum(h))
    }
}

/// Reverberant observation `x * h`, truncated to the source length.
pub fn convolve(x: &SourceSegment, h: &RirRecord) -> Result<ReverberantSample> {
    if x.sample_rate_hz != h.sample_rate_hz {
        return Err(Error::SampleRateMismatch {
            left: x.sample_rate_hz,
            right: h.sample_rate_hz,
        });
    }
    let conv = FftConvolver::new(x.samples.len(), h.samples.len());
    Ok(ReverberantSample {
        samples: conv.convolve(&x.samples, &h.samples),
        sample_rate_hz: x.sample_rate_hz,
        room_id: h.room_id.clone(),
        rir_id: h.rir_id,
        source_id: x.source_id.clone(),
        snr_db: None,
    })
}

/// Direct-form convolution truncated to `x.len()`; reference for the FFT path.
pub fn convolve_direct(x: &[f32], h: &[f32]) -> Vec<f32> {
    (0..x.len())
        .map(|n| {
            let kmax = n.min(h.len().saturating_sub(1));
            let mut acc = 0.0f64;
            for k in 0..=kmax {
                if k < h.len() {
                    acc += f64::from(h[k]) * f64::from(x[n - k]);
                }
            }
            acc as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f32], b: &[f32]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| f64::from(x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| f64::from(*y).powi(2)).sum();
        (num / den).sqrt()
    }

    #[test]
    fn unit_impulse_is_identity() {
        let x = random(1000, 1);
        let mut h = vec![0.0; 50];
        h[0] = 1.0;
        let y = FftConvolver::new(1000, 50).convolve(&x, &h);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn shifted_impulse_delays() {
        let x = random(1000, 2);
        let mut h = vec![0.0; 50];
        h[17] = 1.0;
        let y = FftConvolver::new(1000, 50).convolve(&x, &h);
        assert_eq!(y.len(), 1000);
        assert!(y[..17].iter().all(|v| v.abs() < 1e-6));
        for n in 17..1000 {
            assert!((y[n] - x[n - 17]).abs() < 1e-6);
        }
    }

    #[test]
    fn fft_path_matches_direct_path() {
        for seed in 0..5 {
            let x = random(3000, seed);
            let h = random(700 + 100 * seed as usize, seed + 100);
            let fast = FftConvolver::new(x.len(), h.len()).convolve(&x, &h);
            let slow = convolve_direct(&x, &h);
            assert!(rel_err(&fast, &slow) < 1e-6);
        }
    }

    #[test]
    fn convolution_is_linear() {
        let (x1, x2, h) = (random(2000, 7), random(2000, 8), random(300, 9));
        let conv = FftConvolver::new(2000, 300);
        let (a, b) = (0.7f32, -1.3f32);
        let mix: Vec<f32> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv.convolve(&mix, &h);
        let y1 = conv.convolve(&x1, &h);
        let y2 = conv.convolve(&x2, &h);
        let rhs: Vec<f32> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
        assert!(rel_err(&lhs, &rhs) < 1e-6);
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let x = SourceSegment {
            source_id: "s".into(),
            samples: vec![1.0; 10],
            sample_rate_hz: 8000,
            origin: crate::signal::SourceOrigin::Synthetic { seed: 0 },
        };
        let h = RirRecord {
            room_id: "r".into(),
            rir_id: 0,
            sample_rate_hz: 16000,
            dims: [3.0; 3],
            materials: Default::default(),
            volume_m3: 27.0,
            source_pos: [1.0; 3],
            mic_pos: [2.0; 3],
            rt60_s: 0.5,
            c50_db: 0.0,
            c50_clamped: false,
            decay_truncated: false,
            max_order: 0,
            num_samples: 1,
            samples: vec![1.0],
        };
        assert!(matches!(convolve(&x, &h), Err(Error::SampleRateMismatch { .. })));
    }
}
