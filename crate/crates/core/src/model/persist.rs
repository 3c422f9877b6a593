//! Model state file: one JSON header line followed by the parameter blobs
//! (little-endian `f64`) in header order, each with a SHA-256 checksum.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelState, Params, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::priors::{slot_names, FeatureStandardizer};
use crate::taxonomy::{Taxonomy, CLASS_NAMES};
use crate::tensor::write_atomic;

const FORMAT: &str = "cafo-model";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    classes: Vec<String>,
    taxonomy: Taxonomy,
    prior_slots: Vec<String>,
    standardizer: FeatureStandardizer,
    trained: bool,
    blobs: Vec<BlobInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    len: usize,
    sha256: String,
}

fn blob_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl ModelState {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blobs = Vec::new();
        let mut body = Vec::new();
        for (name, values) in self.params.tensors() {
            let bytes = blob_bytes(values);
            blobs.push(BlobInfo {
                name: name.to_string(),
                len: values.len(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
            body.extend_from_slice(&bytes);
        }
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config,
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            taxonomy: self.taxonomy.clone(),
            prior_slots: slot_names(&self.taxonomy),
            standardizer: self.standardizer.clone(),
            trained: self.trained,
            blobs,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::invalid("model file has no header line"))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {} v{}",
                header.format, header.version
            )));
        }
        header.config.validate()?;
        if header.blobs.len() != PARAM_NAMES.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter blobs, found {}",
                PARAM_NAMES.len(),
                header.blobs.len()
            )));
        }
        let mut params = Params::zeros(&header.config);
        let mut offset = nl + 1;
        for ((name, dst), info) in params.tensors_mut().into_iter().zip(&header.blobs) {
            if info.name != name || info.len != dst.len() {
                return Err(Error::ConfigMismatch(format!(
                    "blob {} ({} values) does not match {name} ({} values)",
                    info.name,
                    info.len,
                    dst.len()
                )));
            }
            let end = offset + info.len * 8;
            let chunk = bytes
                .get(offset..end)
                .ok_or_else(|| Error::invalid(format!("model file truncated in blob {name}")))?;
            if hex::encode(Sha256::digest(chunk)) != info.sha256 {
                return Err(Error::Checksum(name.to_string()));
            }
            for (d, c) in dst.iter_mut().zip(chunk.chunks_exact(8)) {
                *d = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
            }
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::invalid("trailing bytes after parameter blobs"));
        }
        let mut state = ModelState::from_parts(
            header.config,
            params,
            header.standardizer,
            header.taxonomy,
        )?;
        state.trained = header.trained;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ModelState {
        let cfg = ModelConfig {
            attn_dim: 4,
            hidden_dim: 3,
            pool_hidden: 2,
            ..ModelConfig::new(5, 7)
        };
        let mut s = ModelState::initialize(cfg, Taxonomy::default(), 17).unwrap();
        s.standardizer.mean[3] = 0.125;
        s.trained = true;
        s
    }

    #[test]
    fn bytes_roundtrip() {
        let s = state();
        let back = ModelState::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn corrupted_blob_detected() {
        let mut bytes = state().to_bytes().unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        assert!(matches!(ModelState::from_bytes(&bytes), Err(Error::Checksum(n)) if n == "head.b"));
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = state().to_bytes().unwrap();
        assert!(ModelState::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
