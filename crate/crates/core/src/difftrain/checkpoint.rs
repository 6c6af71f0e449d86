//! Binary checkpoint format.
//!
//! Layout: the magic bytes `EQCP`, a `u32` format version, a `u64` header
//! length, a JSON header, then every tensor as little-endian `f64` values in
//! header order. The header echoes the model (and optionally training)
//! configuration and lists each tensor's name, kind, shape and element offset.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::train::TrainConfig;
use crate::equinet::model::{Model, ModelConfig};
use crate::equinet::params::ParameterStore;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EQCP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub params: ParameterStore,
    /// Free-form run metadata stored in the header.
    pub provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: TensorKind,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    tensors: Vec<Entry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let all = self
            .params
            .params
            .iter()
            .map(|(k, t)| (k, t, TensorKind::Param))
            .chain(self.params.buffers.iter().map(|(k, t)| (k, t, TensorKind::Buffer)));
        let mut payload = Vec::new();
        for (name, t, kind) in all {
            tensors.push(Entry {
                name: name.clone(),
                kind,
                shape: [t.rows, t.cols],
                offset,
            });
            offset += t.len();
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.model.clone(),
            train: self.train.clone(),
            provenance: self.provenance.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 {
            return Err(bad("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let hlen = usize::try_from(hlen).map_err(|_| bad("header length overflow"))?;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format_version != version {
            return Err(bad("header version disagrees with file version"));
        }
        let payload = &body[hlen..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut params = ParameterStore::new();
        let mut expected = 0;
        for e in &header.tensors {
            let n = e.shape[0] * e.shape[1];
            if e.offset != expected {
                return Err(Error::Checkpoint(format!("tensor {:?} has a non-contiguous offset", e.name)));
            }
            if e.offset + n > values.len() {
                return Err(Error::Checkpoint(format!("truncated payload at tensor {:?}", e.name)));
            }
            let t = Tensor::from_vec(e.shape[0], e.shape[1], values[e.offset..e.offset + n].to_vec());
            let map: &mut BTreeMap<String, Tensor> = match e.kind {
                TensorKind::Param => &mut params.params,
                TensorKind::Buffer => &mut params.buffers,
            };
            if map.insert(e.name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {:?}", e.name)));
            }
            expected += n;
        }
        if expected != values.len() {
            return Err(bad("payload longer than the tensor directory"));
        }
        let model = Model::new(&header.model).map_err(|e| Error::Checkpoint(e.to_string()))?;
        model
            .check_params(&params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint {
            model: header.model,
            train: header.train,
            params,
            provenance: header.provenance,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig::tiny();
        let params = Model::new(&cfg).unwrap().init_params(5);
        Checkpoint {
            model: cfg,
            train: Some(TrainConfig::default()),
            params,
            provenance: Some(serde_json::json!({"seed": 0, "config_hash": "ab"})),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.eqcp");
        save_checkpoint(&p, &sample()).unwrap();
        let first = std::fs::read(&p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        save_checkpoint(&p, &loaded).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Checkpoint(_))));

        let mut version = bytes.clone();
        version[4] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());

        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());

        let mut c = sample();
        c.params.params.insert("embed.b".into(), Tensor::zeros(1, 1));
        assert!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).is_err());
    }
}
