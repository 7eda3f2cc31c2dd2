//! Parameter checkpoints: a JSON manifest plus one little-endian `f64` blob.
//!
//! ```text
//! <dir>/model.json   manifest: format version, model config, ordered blocks
//! <dir>/model.f64    every block's values concatenated in manifest order
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::nn::{Activation, ParamStore};
use crate::numeric::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "model.json";
pub const BLOB_FILE: &str = "model.f64";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub activation: Option<Activation>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub model: serde_json::Value,
    pub blocks: Vec<BlockEntry>,
}

impl Manifest {
    pub fn of(store: &ParamStore, model: serde_json::Value) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            tool_version: crate::VERSION.to_string(),
            model,
            blocks: store
                .blocks()
                .iter()
                .map(|b| BlockEntry {
                    name: b.name.clone(),
                    shape: b.value.shape().to_vec(),
                    activation: b.activation,
                    trainable: b.trainable,
                })
                .collect(),
        }
    }
}

pub fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f64_le(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of f64 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Writes `store` to `dir`, creating the directory if needed.
pub fn save(dir: &Path, store: &ParamStore, model: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest::of(store, model);
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    let blob: Vec<f64> = store
        .blocks()
        .iter()
        .flat_map(|b| b.value.data().iter().copied())
        .collect();
    write_f64_le(&dir.join(BLOB_FILE), &blob)
}

/// Reads a checkpoint back into a fresh store plus its model config.
pub fn load(dir: &Path) -> Result<(ParamStore, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format {} (expected {CHECKPOINT_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let blob = read_f64_le(&dir.join(BLOB_FILE))?;
    let expected: usize = manifest
        .blocks
        .iter()
        .map(|b| b.shape.iter().product::<usize>())
        .sum();
    if expected != blob.len() {
        return Err(Error::Format(format!(
            "manifest describes {expected} values, blob holds {}",
            blob.len()
        )));
    }
    let mut store = ParamStore::new();
    let mut offset = 0;
    for b in &manifest.blocks {
        let n: usize = b.shape.iter().product();
        let t = Tensor::new(b.shape.clone(), blob[offset..offset + n].to_vec())?;
        store.add(b.name.clone(), t, b.trainable, b.activation);
        offset += n;
    }
    Ok((store, manifest))
}

/// Copies values from `src` into `dst`, requiring identical names and shapes
/// in identical order.
pub fn restore_into(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} blocks, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    for (id, sb) in dst.ids().collect::<Vec<_>>().into_iter().zip(src.blocks()) {
        let db = dst.block_mut(id);
        if db.name != sb.name || db.value.shape() != sb.value.shape() {
            return Err(Error::Format(format!(
                "block mismatch: model has {} {:?}, checkpoint has {} {:?}",
                db.name,
                db.value.shape(),
                sb.name,
                sb.value.shape()
            )));
        }
        db.value = sb.value.clone();
    }
    Ok(())
}
