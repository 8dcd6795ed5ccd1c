//! Checksummed binary container shared by dataset files and model
//! checkpoints.
//!
//! Layout:
//!
//! ```text
//! u64 LE    header length in bytes
//! [u8]      JSON header: {"version", "kind", "meta", "arrays": [{name, len}, ...]}
//! per array (directory order):
//!   len × f64 LE    payload
//!   u32 LE          CRC32 (IEEE) of the payload bytes
//! ```
//!
//! The version field is checked on load; each array is verified against its
//! checksum.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("header is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported container version {found}, this build reads version {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checksum mismatch in array '{name}'")]
    ChecksumMismatch { name: String },
    #[error("container is a '{found}', expected '{expected}'")]
    KindMismatch { found: String, expected: String },
    #[error("array '{name}' missing from container")]
    MissingArray { name: String },
    #[error("malformed container: {0}")]
    Malformed(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: u64,
}

/// In-memory view of a container before writing / after reading.
#[derive(Debug)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new<M: Serialize>(
        kind: &str,
        meta: &M,
        arrays: Vec<(String, Vec<f64>)>,
    ) -> Result<Self, ContainerError> {
        Ok(Container {
            kind: kind.to_string(),
            meta: serde_json::to_value(meta)?,
            arrays,
        })
    }

    pub fn meta_as<M: DeserializeOwned>(&self) -> Result<M, ContainerError> {
        Ok(serde_json::from_value(self.meta.clone())?)
    }

    pub fn take_array(&mut self, name: &str) -> Result<Vec<f64>, ContainerError> {
        let idx = self
            .arrays
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| ContainerError::MissingArray {
                name: name.to_string(),
            })?;
        Ok(self.arrays.remove(idx).1)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ContainerError> {
        let header = Header {
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, data)| ArrayEntry {
                    name: name.clone(),
                    len: data.len() as u64,
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        let mut buf: Vec<u8> = Vec::new();
        for (_, data) in &self.arrays {
            buf.clear();
            buf.reserve(data.len() * 8);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            let crc = crc32fast::hash(&buf);
            w.write_all(&buf)?;
            w.write_all(&crc.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, expected_kind: &str) -> Result<Self, ContainerError> {
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        if header_len > 1 << 30 {
            return Err(ContainerError::Malformed(format!(
                "implausible header length {header_len}"
            )));
        }
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        if header.version != FORMAT_VERSION {
            return Err(ContainerError::VersionMismatch {
                found: header.version,
                supported: FORMAT_VERSION,
            });
        }
        if header.kind != expected_kind {
            return Err(ContainerError::KindMismatch {
                found: header.kind,
                expected: expected_kind.to_string(),
            });
        }
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in &header.arrays {
            let nbytes = entry.len as usize * 8;
            let mut buf = vec![0u8; nbytes];
            r.read_exact(&mut buf)?;
            let mut crc_bytes = [0u8; 4];
            r.read_exact(&mut crc_bytes)?;
            let stored = u32::from_le_bytes(crc_bytes);
            if crc32fast::hash(&buf) != stored {
                return Err(ContainerError::ChecksumMismatch {
                    name: entry.name.clone(),
                });
            }
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push((entry.name.clone(), data));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_kind: &str) -> Result<Self, ContainerError> {
        let file = std::fs::File::open(path)?;
        Container::read_from(std::io::BufReader::new(file), expected_kind)
    }
}
