//! Checkpoint and feature-export tensor file format.
//!
//! Layout: an 8-byte little-endian header length, a JSON header listing
//! `{name, shape, offset}` per tensor (offset in bytes into the data
//! section), then the data section of little-endian `f32` values in
//! row-major order. The same format backs trained-state checkpoints,
//! raw-float image sidecars, and per-user feature exports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorHeader {
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata (seeds, dims) for sanity checks on load.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// In-memory tensor collection, ordered by insertion.
#[derive(Debug, Clone, Default)]
pub struct TensorFile {
    entries: Vec<(String, ArrayD<f64>)>,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::with_capacity(self.entries.len());
        let mut offset = 0u64;
        for (name, value) in &self.entries {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: value.shape().to_vec(),
                offset,
            });
            offset += (value.len() * 4) as u64;
        }
        let header = TensorHeader {
            tensors,
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut file = File::create(path)?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        for (_, value) in &self.entries {
            let mut buf = Vec::with_capacity(value.len() * 4);
            for v in value.iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            file.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|_| Error::TensorFormat("file too short for header length".into()))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|_| Error::TensorFormat("truncated header".into()))?;
        let header: TensorHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::TensorFormat(format!("bad header json: {e}")))?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;

        let mut out = TensorFile {
            entries: Vec::with_capacity(header.tensors.len()),
            meta: header.meta,
        };
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 4;
            if end > data.len() {
                return Err(Error::TensorFormat(format!(
                    "tensor {} overruns the data section ({} > {})",
                    entry.name,
                    end,
                    data.len()
                )));
            }
            let mut values = Vec::with_capacity(count);
            for chunk in data[start..end].chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
            let arr = ArrayD::from_shape_vec(entry.shape.clone(), values)
                .map_err(|e| Error::TensorFormat(format!("tensor {}: {e}", entry.name)))?;
            out.entries.push((entry.name.clone(), arr));
        }
        Ok(out)
    }

    /// Load purely to check structure; returns the reconstructed header.
    pub fn validate(path: &Path) -> Result<TensorHeader> {
        let loaded = Self::load(path)?;
        let mut offset = 0u64;
        let mut tensors = Vec::new();
        for (name, value) in &loaded.entries {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: value.shape().to_vec(),
                offset,
            });
            offset += (value.len() * 4) as u64;
        }
        Ok(TensorHeader {
            tensors,
            meta: loaded.meta,
        })
    }
}
