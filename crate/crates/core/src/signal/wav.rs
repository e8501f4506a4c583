//! WAV reading / writing and corpus segmentation.

use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavSpec};

use crate::{Error, Result};

pub fn write_wav_f32(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        w.write_sample(s).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Reads a mono WAV file (float or integer PCM) as f32 in [-1, 1].
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f32>, u32)> {
    read_wav_range(path, 0, usize::MAX)
}

/// Reads up to `len` samples starting at sample `offset` of a mono WAV file.
pub fn read_wav_range(path: &Path, offset: usize, len: usize) -> Result<(Vec<f32>, u32)> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected mono, found {} channels", spec.channels),
        });
    }
    if offset > 0 {
        let offset = u32::try_from(offset).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            reason: format!("offset {offset} out of range"),
        })?;
        reader
            .seek(offset)
            .map_err(|e| Error::io(path, e))?;
    }
    let samples = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .take(len)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .take(len)
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(wav_err)?
        }
    };
    Ok((samples, spec.sample_rate))
}

/// A fixed-length excerpt of a corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct WavSegment {
    pub file: PathBuf,
    pub offset: usize,
    pub samples: Vec<f32>,
}

/// Recursively collects `.wav` files below `dir` in sorted order.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Cuts every 16 kHz mono WAV below `dir` into `segment_len`-sample excerpts
/// starting every `stride` samples. Silent excerpts are skipped and logged.
pub fn segment_wav_dir(
    dir: &Path,
    sample_rate: u32,
    segment_len: usize,
    stride: usize,
) -> Result<Vec<WavSegment>> {
    assert!(segment_len > 0 && stride > 0);
    let mut out = Vec::new();
    for file in list_wavs(dir)? {
        let (samples, rate) = read_wav_mono(&file)?;
        if rate != sample_rate {
            return Err(Error::SampleRateMismatch {
                left: rate,
                right: sample_rate,
            });
        }
        let mut offset = 0;
        while offset + segment_len <= samples.len() {
            let seg = &samples[offset..offset + segment_len];
            if super::rms(seg) > super::SILENCE_RMS {
                out.push(WavSegment {
                    file: file.clone(),
                    offset,
                    samples: seg.to_vec(),
                });
            } else {
                log::info!("skipping silent segment {}@{offset}", file.display());
            }
            offset += stride;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f32> = (0..100).map(|i| (i as f32 * 0.1).sin() * 0.01).collect();
        write_wav_f32(&p, &x, 16000).unwrap();
        let (y, rate) = read_wav_mono(&p).unwrap();
        assert_eq!(rate, 16000);
        assert_eq!(x, y);
        let (part, _) = read_wav_range(&p, 10, 5).unwrap();
        assert_eq!(part, x[10..15]);
    }

    #[test]
    fn segmentation_skips_silence() {
        let dir = tempfile::tempdir().unwrap();
        let mut x = vec![0.0f32; 4000];
        for (i, v) in x.iter_mut().enumerate().skip(2000) {
            *v = ((i % 50) as f32 - 25.0) / 25.0;
        }
        write_wav_f32(&dir.path().join("b.wav"), &x, 16000).unwrap();
        let segs = segment_wav_dir(dir.path(), 16000, 1000, 1000).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].offset, 2000);
        assert!(segment_wav_dir(dir.path(), 8000, 1000, 1000).is_err());
    }
}
