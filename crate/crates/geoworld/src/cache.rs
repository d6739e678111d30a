//! Precomputed teacher-feature cache: a JSON manifest plus one binary blob
//! of little-endian f64 features, keyed by (corpus id, example id, config
//! hash). Features are pure in (config, scene, trajectory, noise seed), so
//! the cache is method-independent and safe to share across runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::CorpusEntry;
use crate::teacher::{
    sample_trajectory, stable_text_hash, zero_or_directed_trajectory, CameraTrajectory, Direction,
    Teacher, TeacherError, D_T,
};

#[derive(Debug, Serialize, Deserialize)]
struct CacheManifest {
    config_hash: String,
    corpus_id: String,
    feature_dim: usize,
    /// example id -> offset (in f64 elements) into features.bin
    entries: BTreeMap<u64, u64>,
}

const BLOB: &str = "features.bin";
const MANIFEST: &str = "cache_manifest.json";

/// Directory for one (corpus, teacher config) cache.
pub fn cache_dir(root: &Path, corpus_id: &str, config_hash: &str) -> PathBuf {
    root.join(format!("{}__{}", corpus_id, config_hash))
}

/// Deterministic per-example trajectory: zero-motion single frame when the
/// config asks for one frame (the static-teacher analog), otherwise a
/// seeded egocentric sample tied to (example id, config hash).
pub fn entry_trajectory(
    teacher: &Teacher,
    entry_id: u64,
) -> Result<CameraTrajectory, TeacherError> {
    let cfg = &teacher.config;
    if cfg.frame_count == 1 {
        return Ok(zero_or_directed_trajectory(Direction::Forward, 0.0, 1));
    }
    let seed = entry_id ^ stable_text_hash(&cfg.cache_key());
    sample_trajectory(seed, cfg.frame_count, cfg.magnitude_range)
}

pub fn entry_noise_seed(teacher: &Teacher, entry_id: u64) -> u64 {
    (entry_id ^ stable_text_hash(&teacher.config.cache_key())).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn compute_feature(teacher: &Teacher, entry: &CorpusEntry) -> Result<Vec<f64>, TeacherError> {
    let traj = entry_trajectory(teacher, entry.id)?;
    let noise_seed = entry_noise_seed(teacher, entry.id);
    Ok(teacher.features(&entry.scene, &traj, noise_seed)?.pooled)
}

/// Compute and persist features for a whole corpus.
pub fn build_cache(
    root: &Path,
    corpus_id: &str,
    corpus: &[CorpusEntry],
    teacher: &Teacher,
) -> Result<PathBuf, TeacherError> {
    let hash = teacher.config.cache_key();
    let dir = cache_dir(root, corpus_id, &hash);
    fs::create_dir_all(&dir).map_err(|e| TeacherError::Invalid(e.to_string()))?;
    let feats: Vec<Vec<f64>> = corpus
        .par_iter()
        .map(|entry| compute_feature(teacher, entry))
        .collect::<Result<_, _>>()?;
    let mut blob: Vec<u8> = Vec::with_capacity(corpus.len() * D_T * 8);
    let mut entries = BTreeMap::new();
    for (entry, feat) in corpus.iter().zip(&feats) {
        entries.insert(entry.id, (blob.len() / 8) as u64);
        for v in feat {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(BLOB), &blob).map_err(|e| TeacherError::Invalid(e.to_string()))?;
    let manifest = CacheManifest {
        config_hash: hash,
        corpus_id: corpus_id.to_string(),
        feature_dim: D_T,
        entries,
    };
    fs::write(
        dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| TeacherError::Invalid(e.to_string()))?;
    Ok(dir)
}

/// Load a cache; the error names the missing path so callers can surface
/// it directly.
pub fn load_cache(
    root: &Path,
    corpus_id: &str,
    config_hash: &str,
) -> Result<BTreeMap<u64, Vec<f64>>, TeacherError> {
    let dir = cache_dir(root, corpus_id, config_hash);
    let manifest_path = dir.join(MANIFEST);
    let json = fs::read_to_string(&manifest_path).map_err(|_| {
        TeacherError::Invalid(format!("missing teacher cache: {}", manifest_path.display()))
    })?;
    let manifest: CacheManifest =
        serde_json::from_str(&json).map_err(|e| TeacherError::Invalid(e.to_string()))?;
    let blob = fs::read(dir.join(BLOB)).map_err(|e| TeacherError::Invalid(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (id, offset) in manifest.entries {
        let start = offset as usize * 8;
        let end = start + manifest.feature_dim * 8;
        let slice = blob
            .get(start..end)
            .ok_or_else(|| TeacherError::Invalid(format!("cache blob too short for id {}", id)))?;
        let feat: Vec<f64> = slice
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(id, feat);
    }
    Ok(out)
}
