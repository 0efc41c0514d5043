//! Model checkpoints: a flat little-endian `f64` blob plus a JSON manifest
//! naming each parameter with its shape and byte offset.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LearnedPartialModel, ModelConfig};

const FORMAT: &str = "cpm-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub endianness: String,
    pub blob: String,
    pub model: ModelConfig,
    pub params: Vec<ParamEntry>,
}

/// Paths of the blob and manifest for a checkpoint stem.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn save_checkpoint(model: &LearnedPartialModel, stem: &Path) -> Result<Manifest> {
    let (blob_path, manifest_path) = checkpoint_paths(stem);
    let store = model.params();
    let mut bytes = Vec::with_capacity(store.num_scalars() * 8);
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let value = store.get(id);
        let (r, c) = value.dim();
        params.push(ParamEntry { name: store.name(id).to_string(), shape: [r, c], offset: bytes.len() });
        for v in value.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        dtype: "f64".into(),
        endianness: "little".into(),
        blob: blob_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        model: model.config().clone(),
        params,
    };
    fs::write(&blob_path, bytes)?;
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(stem: &Path) -> Result<LearnedPartialModel> {
    let (blob_path, manifest_path) = checkpoint_paths(stem);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format != FORMAT || manifest.dtype != "f64" || manifest.endianness != "little" {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} / {} / {}",
            manifest.format, manifest.dtype, manifest.endianness
        )));
    }
    let bytes = fs::read(&blob_path)?;
    let mut model = LearnedPartialModel::new(manifest.model.clone(), 0);
    if manifest.params.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters, model has {}",
            manifest.params.len(),
            model.params().len()
        )));
    }
    for entry in &manifest.params {
        let id = model
            .params()
            .find(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", entry.name)))?;
        let [r, c] = entry.shape;
        if model.params().get(id).dim() != (r, c) {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", entry.name)));
        }
        let end = entry.offset + r * c * 8;
        let raw = bytes
            .get(entry.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("blob too short for {}", entry.name)))?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        *model.params_mut().get_mut(id) =
            Array2::from_shape_vec((r, c), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(model)
}
