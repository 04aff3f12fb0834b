//! Named-tensor checkpoint archive.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! listing `(name, dtype, shape, offset)` per tensor plus the run
//! configuration and epoch, then the little-endian `f64` payloads.

use std::collections::HashMap;
use std::path::Path;

use msaunet_core::network::MsauNet;
use msaunet_core::Parameterized;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MSAUCKP1";
const DTYPE: &str = "f64";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    /// Byte offset into the payload section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    epoch: usize,
    /// Run configuration as TOML.
    config: String,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Snapshot of every tensor of `net`, running statistics included.
    pub fn capture(net: &MsauNet, config: &RunConfig, epoch: usize) -> Self {
        let mut tensors = Vec::new();
        net.visit("", &mut |name, p| {
            tensors.push(NamedTensor {
                name: name.to_owned(),
                shape: p.shape.clone(),
                data: p.value.clone(),
            })
        });
        Self {
            config: config.clone(),
            epoch,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    dtype: DTYPE.into(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.data.len() * 8;
                e
            })
            .collect();
        let header = Header {
            epoch: self.epoch,
            config: self.config.to_toml(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_owned());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing magic bytes"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| corrupt("header truncated"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let config = RunConfig::from_toml(&header.config)
            .map_err(|e| Error::CorruptCheckpoint(format!("embedded config: {e}")))?;
        let payload = &bytes[16 + len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0;
        for e in header.tensors {
            if e.dtype != DTYPE {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{}` has dtype {}",
                    e.name, e.dtype
                )));
            }
            let count = e.shape.iter().product::<usize>();
            if e.offset != expected_offset {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{}` has offset {}, expected {expected_offset}",
                    e.name, e.offset
                )));
            }
            let raw = payload.get(e.offset..e.offset + count * 8).ok_or_else(|| {
                Error::CorruptCheckpoint(format!("payload of `{}` truncated", e.name))
            })?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            expected_offset += count * 8;
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        if payload.len() != expected_offset {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing payload bytes",
                payload.len() - expected_offset
            )));
        }
        Ok(Self {
            config,
            epoch: header.epoch,
            tensors,
        })
    }

    /// Copies the stored tensors into `net`. Fails on the first tensor, in
    /// model order, that is missing or has a different shape.
    pub fn restore(&self, net: &mut MsauNet) -> Result<()> {
        let by_name: HashMap<&str, &NamedTensor> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut result = Ok(());
        let mut used = 0;
        net.visit_mut("", &mut |name, p| {
            if result.is_err() {
                return;
            }
            match by_name.get(name) {
                Some(t) if t.shape == p.shape => {
                    p.value.copy_from_slice(&t.data);
                    used += 1;
                }
                Some(t) => {
                    result = Err(Error::CheckpointShape {
                        name: name.to_owned(),
                        expected: p.shape.clone(),
                        found: t.shape.clone(),
                    })
                }
                None => {
                    result = Err(Error::CheckpointMismatch(format!(
                        "tensor `{name}` is missing"
                    )))
                }
            }
        });
        result?;
        if used != self.tensors.len() {
            let known: Vec<String> = net.tensor_layout().into_iter().map(|(n, _)| n).collect();
            let extra = self
                .tensors
                .iter()
                .find(|t| !known.contains(&t.name))
                .map_or("?", |t| t.name.as_str());
            return Err(Error::CheckpointMismatch(format!(
                "unexpected tensor `{extra}`"
            )));
        }
        Ok(())
    }

    /// Builds the network described by the embedded configuration.
    pub fn build_model(&self) -> Result<MsauNet> {
        let mut net = MsauNet::new(self.config.model_config()?, self.config.training.seed)?;
        self.restore(&mut net)?;
        Ok(net)
    }
}

pub fn save_checkpoint(net: &MsauNet, config: &RunConfig, epoch: usize, path: &Path) -> Result<()> {
    std::fs::write(path, Checkpoint::capture(net, config, epoch).to_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// SHA-256 over tensor names, shapes and little-endian values, as hex.
pub fn parameter_checksum(net: &MsauNet) -> String {
    let mut hasher = Sha256::new();
    net.visit("", &mut |name, p| {
        hasher.update(name.as_bytes());
        for d in &p.shape {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in &p.value {
            hasher.update(v.to_le_bytes());
        }
    });
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
