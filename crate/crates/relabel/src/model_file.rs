//! Binary model files.
//!
//! ```text
//! [version: u8 = 1][magic "RLBM"][header_len: u32 LE][header: JSON]
//! [weights: K * D f64 LE, row-major by class][biases: K f64 LE]
//! ```
//!
//! The version byte comes first so a reader can reject a file it does not
//! understand before interpreting anything else.

use std::fs;
use std::path::Path;

use relabel_core::classifier::ModelTag;
use relabel_core::{Model, ModelKind, TrainMeta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MODEL_FILE_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"RLBM";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    num_classes: usize,
    hash_dim: usize,
    dim: usize,
    label_space_fingerprint: u64,
    featurizer_fingerprint: u64,
    train_meta: TrainMeta,
}

pub fn encode(model: &Model) -> Vec<u8> {
    let header = Header {
        kind: model.kind(),
        num_classes: model.num_classes(),
        hash_dim: model.hash_dim(),
        dim: model.dim(),
        label_space_fingerprint: model.label_space_fingerprint(),
        featurizer_fingerprint: model.featurizer_fingerprint(),
        train_meta: model.train_meta().clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let params = model.weights().len() + model.biases().len();
    let mut out = Vec::with_capacity(9 + header.len() + 8 * params);
    out.push(MODEL_FILE_VERSION);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in model.weights().iter().chain(model.biases()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a model file's bytes; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |reason: &str| Error::ModelFormat { path: path.to_path_buf(), reason: reason.into() };
    let (&version, rest) = bytes.split_first().ok_or_else(|| bad("empty file"))?;
    if version != MODEL_FILE_VERSION {
        return Err(Error::ModelVersion { path: path.to_path_buf(), version });
    }
    if rest.len() < 8 || &rest[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let header_len = u32::from_le_bytes(rest[4..8].try_into().unwrap()) as usize;
    let rest = &rest[8..];
    if rest.len() < header_len {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..header_len])
        .map_err(|source| Error::MalformedFile { path: path.to_path_buf(), source })?;
    let body = &rest[header_len..];
    let n_weights = header.num_classes.checked_mul(header.dim).ok_or_else(|| bad("shape overflow"))?;
    let n_params = n_weights + header.num_classes;
    if body.len() != 8 * n_params {
        return Err(bad("parameter block length does not match the header"));
    }
    let mut params: Vec<f64> =
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let biases = params.split_off(n_weights);
    let tag = ModelTag {
        kind: header.kind,
        hash_dim: header.hash_dim,
        label_space_fingerprint: header.label_space_fingerprint,
        featurizer_fingerprint: header.featurizer_fingerprint,
    };
    let model = Model::from_parts(tag, header.num_classes, params, biases, header.train_meta)
        .map_err(|source| Error::Data { path: path.to_path_buf(), source })?;
    if model.dim() != header.dim {
        return Err(bad("header dim disagrees with kind and hash_dim"));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let bytes = encode(model);
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
