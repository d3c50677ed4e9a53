//! Checkpoint files: a JSON manifest next to a flat little-endian `f32` blob.
//!
//! For a blob at `run/model.bin` the manifest lives at `run/model.json`. The
//! manifest lists every tensor's name, shape, dtype and byte offset into the blob,
//! plus free-form metadata. Values are stored as `f32`; tensors whose values are
//! already `f32`-representable round-trip bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParamSet, Result, Tensor, TensorError};

pub const FORMAT: &str = "coast-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn manifest_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

pub fn save(blob: &Path, params: &ParamSet, metadata: serde_json::Value) -> Result<Manifest> {
    let mut bytes = Vec::with_capacity(params.numel() * 4);
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let offset = bytes.len();
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_owned(),
            shape: t.shape(),
            dtype: "f32".into(),
            offset,
            nbytes: bytes.len() - offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        blob: blob.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        tensors,
        metadata,
    };
    if let Some(dir) = blob.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(blob, &bytes)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    fs::write(manifest_path(blob), json)?;
    Ok(manifest)
}

pub fn load(blob: &Path) -> Result<(ParamSet, Manifest)> {
    let text = fs::read_to_string(manifest_path(blob))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(TensorError::Checkpoint(format!("unknown format {}", manifest.format)));
    }
    let bytes = fs::read(blob)?;
    let mut params = ParamSet::new();
    for e in &manifest.tensors {
        if e.dtype != "f32" {
            return Err(TensorError::Checkpoint(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let count = e.shape[0] * e.shape[1];
        if e.nbytes != count * 4 || e.offset + e.nbytes > bytes.len() {
            return Err(TensorError::Checkpoint(format!("{}: byte range out of bounds", e.name)));
        }
        let values = bytes[e.offset..e.offset + e.nbytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.insert(e.name.clone(), Tensor::new(e.shape, values)?)?;
    }
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f32_values_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        for (i, shape) in [[3, 4], [1, 7], [5, 1]].into_iter().enumerate() {
            let t = Tensor::randn(shape, 1.0, &mut rng);
            let t = Tensor::new(shape, t.data().iter().map(|&v| v as f32 as f64).collect()).unwrap();
            ps.insert(format!("t{i}"), t).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("model.bin");
        save(&blob, &ps, serde_json::json!({"seed": 1})).unwrap();
        let (back, manifest) = load(&blob).unwrap();
        assert_eq!(manifest.metadata["seed"], 1);
        assert_eq!(manifest.tensors[1].offset, 48);
        for ((n1, a), (n2, b)) in ps.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::zeros([4, 4])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("m.bin");
        save(&blob, &ps, serde_json::Value::Null).unwrap();
        fs::write(&blob, [0u8; 8]).unwrap();
        assert!(matches!(load(&blob), Err(TensorError::Checkpoint(_))));
    }
}
