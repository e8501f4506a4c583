//! On-disk RIR store: one 32-bit float WAV per response plus `rirs.jsonl`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::sim::RirRecord;
use crate::signal::wav::{read_wav_mono, write_wav_f32};
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "rirs.jsonl";

pub fn write_store(dir: &Path, records: &[RirRecord]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for rec in records {
        write_wav_f32(&dir.join(rec.file_name()), &rec.samples, rec.sample_rate_hz)?;
    }
    write_manifest(&dir.join(MANIFEST_NAME), records)
}

pub fn write_manifest(path: &Path, records: &[RirRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the manifest only; `samples` stay empty.
pub fn read_manifest(path: &Path) -> Result<Vec<RirRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RirRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads the manifest and every WAV it references.
pub fn read_store(dir: &Path) -> Result<Vec<RirRecord>> {
    let mut records = read_manifest(&dir.join(MANIFEST_NAME))?;
    for rec in &mut records {
        let path = dir.join(rec.file_name());
        let (samples, rate) = read_wav_mono(&path)?;
        if rate != rec.sample_rate_hz {
            return Err(Error::SampleRateMismatch {
                left: rate,
                right: rec.sample_rate_hz,
            });
        }
        rec.samples = samples;
    }
    Ok(records)
}
