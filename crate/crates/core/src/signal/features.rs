//! STFT log-magnitude features and per-sample standardization.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FFT_SIZE: usize = 32;
pub const HOP_SIZE: usize = 16;
pub const NUM_BINS: usize = FFT_SIZE / 2 + 1;
pub const LOG_EPS: f64 = 1e-8;

/// Mean and (population) standard deviation removed by [`standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

/// Row-major `rows x cols` (frequency x time) feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub standardization: Option<Standardization>,
}

impl FeatureMatrix {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn mean_variance(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = self
            .values
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var)
    }
}

/// Number of STFT frames for a signal of `len` samples (no padding).
pub fn frame_count(len: usize) -> usize {
    if len < FFT_SIZE {
        0
    } else {
        (len - FFT_SIZE) / HOP_SIZE + 1
    }
}

fn hann() -> &'static [f64; FFT_SIZE] {
    static W: OnceLock<[f64; FFT_SIZE]> = OnceLock::new();
    // Periodic Hann.
    W.get_or_init(|| std::array::from_fn(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FFT_SIZE as f64).cos()))
}

/// Hann-windowed 32-point STFT with hop 16, `log(|X| + 1e-8)` per bin.
pub fn stft_logmag(y: &[f32]) -> FeatureMatrix {
    let cols = frame_count(y.len());
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let window = hann();
    let mut frame = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut values = vec![0.0f32; NUM_BINS * cols];
    for t in 0..cols {
        let start = t * HOP_SIZE;
        for (i, f) in frame.iter_mut().enumerate() {
            *f = f64::from(y[start + i]) * window[i];
        }
        fft.process_with_scratch(&mut frame, &mut spec, &mut scratch)
            .expect("fft sizes match");
        for (k, c) in spec.iter().enumerate() {
            values[k * cols + t] = (c.norm() + LOG_EPS).ln() as f32;
        }
    }
    FeatureMatrix {
        rows: NUM_BINS,
        cols,
        values,
        standardization: None,
    }
}

/// Subtracts the matrix mean and divides by the population standard
/// deviation. The statistics used are recorded on the output.
pub fn standardize(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    let (mean, var) = f.mean_variance();
    let std = var.sqrt();
    if !(std > 1e-12) {
        return Err(Error::DegenerateFeature);
    }
    let values = f
        .values
        .iter()
        .map(|&v| ((f64::from(v) - mean) / std) as f32)
        .collect();
    Ok(FeatureMatrix {
        rows: f.rows,
        cols: f.cols,
        values,
        standardization: Some(Standardization { mean, std }),
    })
}

const CACHE_MAGIC: &[u8; 4] = b"FEAT";

/// Writes `FEAT`, u16 rows, u16 cols, then little-endian f32 values.
pub fn write_feature_cache(path: &Path, f: &FeatureMatrix) -> Result<()> {
    let rows = u16::try_from(f.rows).map_err(|_| Error::Shape(format!("{} rows exceed u16", f.rows)))?;
    let cols = u16::try_from(f.cols).map_err(|_| Error::Shape(format!("{} cols exceed u16", f.cols)))?;
    let mut buf = Vec::with_capacity(8 + 4 * f.values.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for v in &f.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 8 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("missing FEAT header"));
    }
    let rows = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let cols = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if bytes.len() != 8 + 4 * rows * cols {
        return Err(bad("payload length does not match header"));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(FeatureMatrix {
        rows,
        cols,
        values,
        standardization: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chirp(n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                ((2.0 * PI * (200.0 + 1500.0 * t) * t).sin() * (1.0 + 0.5 * (7.0 * t).sin())) as f32
            })
            .collect()
    }

    #[test]
    fn four_second_input_has_17_by_3999() {
        assert_eq!(frame_count(64000), (64000 - 32) / 16 + 1);
        assert_eq!(frame_count(64000), 3999);
        let f = stft_logmag(&chirp(64000));
        assert_eq!((f.rows, f.cols), (17, 3999));
        assert_eq!(f.values.len(), 17 * 3999);
    }

    #[test]
    fn silence_maps_to_log_eps() {
        let f = stft_logmag(&vec![0.0; 160]);
        let expected = LOG_EPS.ln() as f32;
        assert!(f.values.iter().all(|&v| v == expected));
        assert!(matches!(standardize(&f), Err(Error::DegenerateFeature)));
    }

    #[test]
    fn four_khz_sine_peaks_in_bin_eight() {
        let x: Vec<f32> = (0..16000)
            .map(|n| (2.0 * PI * 4000.0 * n as f64 / 16000.0).sin() as f32)
            .collect();
        let f = stft_logmag(&x);
        for t in [0, 100, 500, f.cols - 1] {
            let best = (0..f.rows).max_by(|&a, &b| f.get(a, t).total_cmp(&f.get(b, t))).unwrap();
            assert_eq!(best, 8);
        }
    }

    #[test]
    fn standardized_moments_and_idempotence() {
        let f = standardize(&stft_logmag(&chirp(16000))).unwrap();
        let (m, v) = f.mean_variance();
        assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-3, "{m} {v}");
        let g = standardize(&f).unwrap();
        for (a, b) in f.values.iter().zip(&g.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cache_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.feat");
        let f = stft_logmag(&chirp(800));
        write_feature_cache(&path, &f).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FEAT");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 17);
        let g = read_feature_cache(&path).unwrap();
        assert_eq!(f.values, g.values);
        std::fs::write(&path, b"JUNKxxxx").unwrap();
        assert!(read_feature_cache(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn standardize_is_affine_invariant(a in 0.1f32..20.0, b in -50.0f32..50.0, seed in 0u64..1000) {
            let x: Vec<f32> = chirp(2000).iter().enumerate().map(|(i, v)| v + ((i as u64 * 2654435761 + seed) % 97) as f32 * 0.01).collect();
            let f = stft_logmag(&x);
            let g = FeatureMatrix { values: f.values.iter().map(|v| a * v + b).collect(), ..f.clone() };
            let sf = standardize(&f).unwrap();
            let sg = standardize(&g).unwrap();
            for (p, q) in sf.values.iter().zip(&sg.values) {
                prop_assert!((p - q).abs() < 1e-3, "{} vs {}", p, q);
            }
        }

        #[test]
        fn shape_is_fixed_by_length(len in 32usize..5000) {
            let f = stft_logmag(&vec![0.1; len]);
            prop_assert_eq!(f.rows, 17);
            prop_assert_eq!(f.cols, (len - 32) / 16 + 1);
        }
    }
}
