//! Versioned binary container for named `f64` tensors plus a JSON header.
//!
//! Layout: magic, format version (u32 LE), header length (u64 LE), header
//! JSON, tensor data as little-endian `f64` in header order, and a SHA-256
//! digest of everything before it.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::Mat;

pub const MAGIC: &[u8; 8] = b"ARGRELCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Mat)>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorInfo { name: name.clone(), rows: t.nrows(), cols: t.ncols() })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.write_u64::<LittleEndian>(header.len() as u64).unwrap();
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.iter() {
                out.write_f64::<LittleEndian>(*v).unwrap();
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let min = MAGIC.len() + 4 + 8 + 32;
        if bytes.len() < min {
            return Err(CheckpointError::Integrity("file truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Integrity("digest mismatch".into()));
        }
        if &body[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::Integrity("not a checkpoint file".into()));
        }
        let mut cursor = &body[MAGIC.len()..];
        let version = cursor.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Incompatible(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let header_len = cursor.read_u64::<LittleEndian>()? as usize;
        if header_len > cursor.len() {
            return Err(CheckpointError::Integrity("header length out of range".into()));
        }
        let header: Header = serde_json::from_slice(&cursor[..header_len])?;
        cursor = &cursor[header_len..];
        let needed: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
        if needed != cursor.len() {
            return Err(CheckpointError::Integrity(format!(
                "tensor data is {} bytes, header describes {needed}",
                cursor.len()
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let mut data = vec![0.0; info.rows * info.cols];
            cursor.read_f64_into::<LittleEndian>(&mut data)?;
            let t = Mat::from_shape_vec((info.rows, info.cols), data)
                .map_err(|e| CheckpointError::Integrity(e.to_string()))?;
            tensors.push((info.name, t));
        }
        Ok(Self { kind: header.kind, meta: header.meta, tensors })
    }

    /// Write atomically: a temporary sibling is renamed into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Remove and return the tensor called `name`.
    pub fn take(&mut self, name: &str) -> Option<Mat> {
        let pos = self.tensors.iter().position(|(n, _)| n == name)?;
        Some(self.tensors.remove(pos).1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> Container {
        Container {
            kind: "test".into(),
            meta: serde_json::json!({"a": 1}),
            tensors: vec![
                ("x".into(), array![[1.0, f64::MIN_POSITIVE], [-0.0, 1e300]]),
                ("y".into(), array![[std::f64::consts::PI]]),
            ],
        }
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.kind, "test");
        for ((_, a), (_, b)) in c.tensors.iter().zip(&back.tensors) {
            let bits = |m: &Mat| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Container::from_bytes(&bytes), Err(CheckpointError::Integrity(_))));
        assert!(matches!(Container::from_bytes(&bytes[..10]), Err(CheckpointError::Integrity(_))));
    }

    #[test]
    fn version_mismatch_is_incompatible() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 99;
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        assert!(matches!(Container::from_bytes(&bytes), Err(CheckpointError::Incompatible(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(Container::load(&path).unwrap(), sample());
    }
}
