//! Checkpoint format: one binary blob of little-endian f64 per named
//! parameter plus a JSON manifest {name -> shape, byte offset, file}.
//! Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Named parameter map in deterministic (sorted) order.
pub type ParamStore = BTreeMap<String, Tensor>;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    shape: Vec<usize>,
    offset: u64,
    file: String,
}

const BLOB: &str = "params.bin";
const MANIFEST: &str = "manifest.json";

pub fn save_params(dir: &Path, params: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TensorError::Invalid(e.to_string()))?;
    let mut blob = Vec::new();
    let mut manifest = BTreeMap::new();
    for (name, t) in params {
        manifest.insert(
            name.clone(),
            ManifestEntry {
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
                file: BLOB.to_string(),
            },
        );
        blob.extend_from_slice(&t.to_le_bytes());
    }
    fs::File::create(dir.join(BLOB))
        .and_then(|mut f| f.write_all(&blob))
        .map_err(|e| TensorError::Invalid(e.to_string()))?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST), json).map_err(|e| TensorError::Invalid(e.to_string()))?;
    Ok(())
}

pub fn load_params(dir: &Path) -> Result<ParamStore> {
    let json = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| TensorError::Invalid(format!("{}: {}", dir.display(), e)))?;
    let manifest: BTreeMap<String, ManifestEntry> =
        serde_json::from_str(&json).map_err(|e| TensorError::Invalid(e.to_string()))?;
    let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut out = ParamStore::new();
    for (name, entry) in manifest {
        let bytes = match blobs.get(&entry.file) {
            Some(b) => b,
            None => {
                let b = fs::read(dir.join(&entry.file))
                    .map_err(|e| TensorError::Invalid(e.to_string()))?;
                blobs.entry(entry.file.clone()).or_insert(b)
            }
        };
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let slice = bytes
            .get(start..start + numel * 8)
            .ok_or_else(|| TensorError::Invalid(format!("blob too short for {}", name)))?;
        out.insert(name, Tensor::from_le_bytes(entry.shape, slice)?);
    }
    Ok(out)
}
