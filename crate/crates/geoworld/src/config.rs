//! Run configuration: JSON with strict key checking, dotted-path
//! overrides, and full echo into every metrics header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::LossWeights;
use crate::scene::SceneConfig;
use crate::teacher::TeacherConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("unknown or ill-typed key in override '{key}': {detail}")]
    BadOverride { key: String, detail: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Base,
    FtOnly,
    StaticTeacher,
    Ours,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::FtOnly => "ft_only",
            Method::StaticTeacher => "static_teacher",
            Method::Ours => "ours",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_path: PathBuf,
    pub eval_path: PathBuf,
    pub cache_root: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_path: PathBuf::from("data/train.jsonl"),
            eval_path: PathBuf::from("data/eval.jsonl"),
            cache_root: PathBuf::from("data/teacher_cache"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub loss: LossWeights,
    pub teacher: TeacherConfig,
    pub method: Method,
    pub data: DataConfig,
    pub scene: SceneConfig,
    /// Alignment over per-token features instead of the pooled vector.
    pub align_per_token: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![42, 43, 44, 45, 46],
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            loss: LossWeights::default(),
            teacher: TeacherConfig::default(),
            method: Method::Ours,
            data: DataConfig::default(),
            scene: SceneConfig::default(),
            align_per_token: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError::Invalid("learning_rate must be positive".into()));
        }
        self.loss
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.teacher
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scene
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Invalid(format!("{}: {}", path.display(), e)))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply dotted `key=value` overrides on the JSON form, then
    /// re-validate against the strict schema. Invalid keys abort before
    /// any side effect.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for (key, raw) in overrides {
            let parsed: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            let mut slot = &mut value;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| ConfigError::BadOverride {
                        key: key.clone(),
                        detail: format!("no such field '{}'", part),
                    })?;
            }
            *slot = parsed;
        }
        Self::from_value(value).map_err(|e| ConfigError::BadOverride {
            key: overrides
                .iter()
                .map(|(k, _)| k.as_str())
                .collect::<Vec<_>>()
                .join(","),
            detail: e.to_string(),
        })
    }
}
