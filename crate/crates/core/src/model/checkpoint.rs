//! Binary checkpoints: `AENV` magic, u32 format version, u32 tensor count,
//! then per tensor a u32 name length, UTF-8 name, u8 rank, u32 dims and
//! f32 values, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::network::Network;
use super::tensor::{Real, Tensor, MAX_RANK};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AENV";
pub const FORMAT_VERSION: u32 = 1;
/// Prefix of optimizer-state tensors.
pub const OPTIMIZER_PREFIX: &str = "optimizer/adam/";

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn insert<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    /// Adds all parameters and buffers of `net` under `prefix`.
    pub fn add_network<T: Real>(&mut self, prefix: &str, net: &Network<T>) {
        for (n, p) in net.params() {
            self.insert(format!("{prefix}{n}"), &p.value);
        }
        for (n, b) in net.buffers() {
            self.insert(format!("{prefix}{n}"), b);
        }
    }

    /// Loads parameters and buffers of `net` stored under `prefix`.
    pub fn load_network<T: Real>(&self, prefix: &str, net: &mut Network<T>) -> Result<()> {
        let fetch = |name: String, shape: &[usize]| -> Result<Tensor<T>> {
            let t = self
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::Shape(format!(
                    "tensor {name}: checkpoint {:?}, model {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.cast())
        };
        for (n, p) in net.params_mut() {
            p.value = fetch(format!("{prefix}{n}"), p.value.shape())?;
        }
        for (n, b) in net.buffers_mut() {
            *b = fetch(format!("{prefix}{n}"), b.shape())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(bad("unexpected end of file".into()));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(bad("missing AENV magic".into()));
        }
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_of(take(4)?);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let count = u32_of(take(4)?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u32_of(take(4)?) as usize;
            let name = std::str::from_utf8(take(len)?)
                .map_err(|e| bad(format!("tensor name: {e}")))?
                .to_owned();
            let rank = take(1)?[0] as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(bad(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32_of(take(4)?) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Path of the JSON sidecar that accompanies a checkpoint.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar<S: Serialize>(checkpoint: &Path, meta: &S) -> Result<()> {
    let path = sidecar_path(checkpoint);
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Encoder, EncoderConfig};

    #[test]
    fn round_trip_preserves_every_tensor() {
        let enc = Encoder::<f32>::new(EncoderConfig::default(), 17, 200, 3).unwrap();
        let mut ck = Checkpoint::default();
        ck.add_network("encoder/", &enc.net);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, ck);

        let mut other = Encoder::<f32>::new(EncoderConfig::default(), 17, 200, 9).unwrap();
        back.load_network("encoder/", &mut other.net).unwrap();
        for ((_, a), (_, b)) in enc.net.params().iter().zip(other.net.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::default();
        ck.insert("w", &Tensor::new(vec![2], vec![1.0f32, -2.0]).unwrap());
        let b = ck.to_bytes();
        assert_eq!(&b[..4], b"AENV");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(b[16], b'w');
        assert_eq!(b[17], 1);
        assert_eq!(u32::from_le_bytes(b[18..22].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[22..26].try_into().unwrap()), 1.0);
        assert_eq!(b.len(), 30);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = Path::new("x.ckpt");
        assert!(Checkpoint::from_bytes(b"NOPE", p).is_err());
        let mut ck = Checkpoint::default();
        ck.insert("w", &Tensor::new(vec![3], vec![1.0f32; 3]).unwrap());
        let b = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1], p).is_err());
    }
}
