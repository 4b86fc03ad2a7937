use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DualEncoderModel, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
/// First eight bytes of every blob.
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"DUOSNT\x00\x01";

/// JSON side of a checkpoint. Offsets and lengths are in bytes, counted from
/// the start of the blob (the magic occupies bytes 0..8).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

/// Companion blob path: the manifest path with a `.bin` extension.
pub fn blob_path(manifest: &Path) -> Result<PathBuf> {
    if manifest.extension().is_some_and(|e| e == "bin") {
        return Err(Error::Checkpoint("manifest path must not end in .bin".into()));
    }
    Ok(manifest.with_extension("bin"))
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Writes `path` (JSON manifest) and its `.bin` companion.
pub fn save_checkpoint(model: &DualEncoderModel, path: &Path) -> Result<()> {
    let blob_file = blob_path(path)?;
    let mut blob = CHECKPOINT_MAGIC.to_vec();
    let mut tensors = Vec::with_capacity(model.store.len());
    for (name, t) in model.store.iter() {
        let offset = blob.len() as u64;
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        blob: blob_file
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| format_err("blob path has no file name"))?
            .to_string(),
        tensors,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(&blob_file, blob)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DualEncoderModel> {
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
    let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(CHECKPOINT_VERSION)) {
        return Err(format_err(format!(
            "unsupported format_version {version:?}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let manifest: CheckpointManifest = serde_json::from_value(raw)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let blob = fs::read(dir.join(&manifest.blob))?;
    if blob.len() < CHECKPOINT_MAGIC.len() || blob[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic bytes in blob"));
    }

    let mut model = DualEncoderModel::new(manifest.config.clone())?;
    if manifest.tensors.len() != model.store.len() {
        return Err(format_err(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            model.store.len()
        )));
    }
    let mut seen = HashMap::new();
    for entry in &manifest.tensors {
        let id = model
            .store
            .id(&entry.name)
            .ok_or_else(|| format_err(format!("unknown tensor `{}`", entry.name)))?;
        if seen.insert(id.index(), ()).is_some() {
            return Err(format_err(format!("tensor `{}` listed twice", entry.name)));
        }
        if entry.dtype != "f64" {
            return Err(format_err(format!("tensor `{}` has dtype {}", entry.name, entry.dtype)));
        }
        let target = model.store.get_mut(id);
        if entry.shape != target.shape() {
            return Err(format_err(format!(
                "tensor `{}` has shape {:?}, config implies {:?}",
                entry.name,
                entry.shape,
                target.shape()
            )));
        }
        let expected = target.len() as u64 * 8;
        if entry.length != expected {
            return Err(format_err(format!(
                "tensor `{}` spans {} bytes, shape implies {expected}",
                entry.name, entry.length
            )));
        }
        let start = usize::try_from(entry.offset).map_err(|_| format_err("offset overflow"))?;
        let end = start
            .checked_add(expected as usize)
            .filter(|&e| start >= CHECKPOINT_MAGIC.len() && e <= blob.len())
            .ok_or_else(|| format_err(format!("tensor `{}` lies outside the blob (truncated?)", entry.name)))?;
        for (dst, chunk) in target.data_mut().iter_mut().zip(blob[start..end].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(model)
}
