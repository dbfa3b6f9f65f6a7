//! Versioned parameter container.
//!
//! Layout: `ECGDLCKP`, format version (u32 LE), manifest length (u32 LE),
//! JSON manifest, every tensor of [`Model::named_tensors`] as little-endian
//! values in that order, then the SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::dataset::PreprocessConfig;
use crate::nn::{ArchConfig, DType, Model, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"ECGDLCKP";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub dtype: DType,
    pub seed: u64,
    /// Hash of the record split the weights were trained on.
    pub split_hash: Option<String>,
    /// Preprocessing the model expects at inference.
    pub preprocess: Option<PreprocessConfig>,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    pub fn new<S: Scalar>(model: &Model<S>, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            arch: model.arch.clone(),
            dtype: S::DTYPE,
            seed,
            split_hash: None,
            preprocess: None,
            tensors: entries(model),
        }
    }
}

fn entries<S: Scalar>(model: &Model<S>) -> Vec<TensorEntry> {
    model
        .named_tensors()
        .into_iter()
        .map(|(name, t)| TensorEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect()
}

/// Serialises `model`; the tensor list and dtype of `manifest` are
/// refreshed from the model itself.
pub fn encode_checkpoint<S: Scalar>(model: &Model<S>, manifest: &CheckpointManifest) -> Result<Vec<u8>, TrainError> {
    let mut manifest = manifest.clone();
    manifest.format_version = FORMAT_VERSION;
    manifest.arch = model.arch.clone();
    manifest.dtype = S::DTYPE;
    manifest.tensors = entries(model);
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + model.param_count() * S::DTYPE.size() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in model.named_tensors() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &Model<S>,
    manifest: &CheckpointManifest,
) -> Result<(), TrainError> {
    let bytes = encode_checkpoint(model, manifest)?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses and verifies a checkpoint. When `expected` is given, the stored
/// tensors must match the shapes that architecture implies.
pub fn decode_checkpoint<S: Scalar>(
    bytes: &[u8],
    expected: Option<&ArchConfig>,
) -> Result<(Model<S>, CheckpointManifest), TrainError> {
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
        return Err(TrainError::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(TrainError::Checksum);
    }
    if &body[..8] != MAGIC {
        return Err(TrainError::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(TrainError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let json_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let json = body
        .get(16..16 + json_len)
        .ok_or_else(|| TrainError::Checkpoint("manifest runs past end of file".into()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(json)?;
    if manifest.dtype != S::DTYPE {
        return Err(TrainError::Checkpoint(format!(
            "stored as {:?}, requested {:?}",
            manifest.dtype,
            S::DTYPE
        )));
    }
    let arch = expected.unwrap_or(&manifest.arch);
    let mut model = Model::<S>::zeros(arch)?;
    let want = entries(&model);
    for (i, w) in want.iter().enumerate() {
        match manifest.tensors.get(i) {
            Some(found) if found == w => {}
            found => {
                return Err(TrainError::ShapeMismatch {
                    layer: w.name.clone(),
                    expected: w.shape.clone(),
                    found: found.map(|f| format!("{} {:?}", f.name, f.shape)),
                })
            }
        }
    }
    if let Some(extra) = manifest.tensors.get(want.len()) {
        return Err(TrainError::ShapeMismatch {
            layer: extra.name.clone(),
            expected: Vec::new(),
            found: Some(format!("{} {:?}", extra.name, extra.shape)),
        });
    }
    let size = S::DTYPE.size();
    let mut data = &body[16 + json_len..];
    if data.len() != model.param_count() * size {
        return Err(TrainError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            model.param_count() * size,
            data.len()
        )));
    }
    for t in model.tensors_mut() {
        let n = t.len();
        let values: Vec<S> = data[..n * size].chunks_exact(size).map(S::read_le).collect();
        *t = Tensor::from_vec(t.shape(), values)?;
        data = &data[n * size..];
    }
    Ok((model, manifest))
}

pub fn load_checkpoint<S: Scalar>(
    path: &Path,
    expected: Option<&ArchConfig>,
) -> Result<(Model<S>, CheckpointManifest), TrainError> {
    decode_checkpoint(&fs::read(path)?, expected)
}
