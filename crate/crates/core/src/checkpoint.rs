//! Binary checkpoint container.
//!
//! Layout: magic `HWGN`, format version (u32 LE), manifest length (u32 LE),
//! UTF-8 JSON manifest, then every tensor as contiguous little-endian `f32`
//! in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HWGN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload section.
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: u64,
    pub config: Value,
    /// Small non-tensor state: optimizer counters, rng position, baselines.
    pub state: Value,
    pub tensors: Vec<TensorEntry>,
}

/// Named `f32` tensors plus JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: Value,
    pub state: Value,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

impl Checkpoint {
    pub fn new(step: u64, config: Value, state: Value) -> Self {
        Self {
            step,
            config,
            state,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: ArrayD<f32>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n.starts_with(prefix))
    }

    /// The tensor under `name`, which must have exactly `shape`.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&ArrayD<f32>> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let bytes = 4 * t.len() as u64;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                bytes,
            });
            offset += bytes;
        }
        let manifest = Manifest {
            step: self.step,
            config: self.config.clone(),
            state: self.state.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(12 + json.len() + offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 12 {
            return Err(corrupt("file shorter than the header"));
        }
        if bytes[..4] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < mlen {
            return Err(corrupt("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| Error::CorruptCheckpoint(format!("manifest: {e}")))?;
        let payload = &body[mlen..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            if e.dtype != "f32" || e.offset != expected || e.bytes != 4 * n as u64 {
                return Err(Error::CorruptCheckpoint(format!(
                    "manifest entry for {} is inconsistent",
                    e.name
                )));
            }
            let end = (e.offset + e.bytes) as usize;
            if end > payload.len() {
                return Err(Error::CorruptCheckpoint(format!(
                    "payload truncated inside tensor {}",
                    e.name
                )));
            }
            let data: Vec<f32> = payload[e.offset as usize..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&e.shape), data)
                .map_err(|err| Error::CorruptCheckpoint(err.to_string()))?;
            tensors.push((e.name.clone(), t));
            expected += e.bytes;
        }
        if payload.len() as u64 != expected {
            return Err(corrupt("trailing bytes after the last tensor"));
        }
        Ok(Self {
            step: manifest.step,
            config: manifest.config,
            state: manifest.state,
            tensors,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use serde_json::json;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(42, json!({"lr": 0.001}), json!({"t": 3}));
        c.push("D/fc2/w", arr2(&[[1.5f32, -2.0, f32::MIN_POSITIVE]]).into_dyn());
        c.push("Gp/fc/b", ndarray::arr1(&[0.1f32, 0.2]).into_dyn());
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes().unwrap();
        assert_eq!(&b[..4], b"HWGN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), FORMAT_VERSION);
        let mlen = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        assert_eq!(b.len(), 12 + mlen + 4 * 5);
        let tail = &b[12 + mlen..12 + mlen + 4];
        assert_eq!(f32::from_le_bytes(tail.try_into().unwrap()), 1.5);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let b = sample().to_bytes().unwrap();
        for n in 0..b.len() {
            assert!(Checkpoint::from_bytes(&b[..n]).is_err(), "prefix {n} accepted");
        }
        let mut longer = b.clone();
        longer.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&longer),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn unknown_version() {
        let mut b = sample().to_bytes().unwrap();
        b[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&b),
            Err(Error::UnsupportedVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn shape_check() {
        let c = sample();
        assert!(c.expect("Gp/fc/b", &[2]).is_ok());
        assert!(matches!(c.expect("Gp/fc/b", &[3]), Err(Error::CorruptCheckpoint(_))));
        assert!(matches!(c.expect("nope", &[1]), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
    }
}
