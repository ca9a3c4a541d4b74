//! Parameter checkpoints: a flat little-endian tensor blob plus a JSON
//! manifest written next to it as `<blob>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topicforge_core::model::{ModelConfig, ModelParams};

pub const FORMAT: &str = "topicforge-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Float64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: Dtype,
    pub byte_order: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub total_bytes: usize,
    pub sha256: String,
}

pub fn manifest_path(blob: &Path) -> PathBuf {
    let mut name = blob.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode(params: &ModelParams, dtype: Dtype) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(params.values().len() * dtype.size());
    for &v in params.values() {
        match dtype {
            Dtype::Float32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::Float64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    bytes
}

pub fn manifest(params: &ModelParams, dtype: Dtype, blob: &[u8]) -> Manifest {
    Manifest {
        format: FORMAT.into(),
        dtype,
        byte_order: "little".into(),
        config: *params.config(),
        tensors: params
            .layout()
            .entries()
            .iter()
            .map(|(name, span)| TensorEntry {
                name: name.clone(),
                shape: span.shape(),
                offset: span.offset * dtype.size(),
            })
            .collect(),
        total_bytes: blob.len(),
        sha256: format!("{:x}", Sha256::digest(blob)),
    }
}

/// Writes `path` and `path.json`. With `Float32` the values are rounded, so
/// round-trips are exact only for parameters already representable in f32.
pub fn save(path: &Path, params: &ModelParams, dtype: Dtype) -> Result<()> {
    let blob = encode(params, dtype);
    let m = manifest(params, dtype, &blob);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, &blob).with_context(|| format!("writing {}", path.display()))?;
    crate::formats::write_json(&manifest_path(path), &m)
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let mpath = manifest_path(path);
    let m: Manifest = crate::formats::read_json(&mpath)?;
    ensure!(m.format == FORMAT, "{}: not a checkpoint manifest", mpath.display());
    ensure!(m.byte_order == "little", "{}: unsupported byte order {}", mpath.display(), m.byte_order);
    let blob = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(blob.len() == m.total_bytes, "{}: expected {} bytes, found {}", path.display(), m.total_bytes, blob.len());
    let digest = format!("{:x}", Sha256::digest(&blob));
    ensure!(digest == m.sha256, "{}: checksum mismatch", path.display());

    let layout = topicforge_core::model::Layout::new(&m.config);
    let expected: Vec<TensorEntry> = layout
        .entries()
        .iter()
        .map(|(name, span)| TensorEntry {
            name: name.clone(),
            shape: span.shape(),
            offset: span.offset * m.dtype.size(),
        })
        .collect();
    if expected != m.tensors {
        bail!("{}: tensor table does not match the model configuration", mpath.display());
    }
    ensure!(blob.len() == layout.total() * m.dtype.size(), "{}: blob size does not match tensor table", path.display());

    let values: Vec<f64> = match m.dtype {
        Dtype::Float32 => blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        Dtype::Float64 => blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    Ok(ModelParams::from_values(m.config, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use topicforge_core::model::embed;
    use topicforge_core::tokenize::TokenSequence;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::desk(20, 8).with_classes(3);
        let mut params = ModelParams::init(cfg, 4).unwrap();
        params.round_to_f32();
        for dtype in [Dtype::Float32, Dtype::Float64] {
            let path = dir.path().join(format!("m-{dtype:?}.ckpt"));
            save(&path, &params, dtype).unwrap();
            let back = load(&path).unwrap();
            assert_eq!(back, params);
            let seq = TokenSequence {
                ids: vec![3, 5, 9, 0, 0, 0, 0, 0],
                mask: vec![true, true, true, false, false, false, false, false],
            };
            let a = embed(&params, &seq).unwrap();
            let b = embed(&back, &seq).unwrap();
            assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::init(ModelConfig::desk(10, 4), 1).unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &params, Dtype::Float32).unwrap();
        let mut blob = fs::read(&path).unwrap();
        blob[7] ^= 1;
        fs::write(&path, &blob).unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("checksum"));
    }
}
