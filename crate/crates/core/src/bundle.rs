//! Reproducible experiment bundles: the configuration snapshot, a content
//! hash of every input, the produced artifacts and run metadata.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Record written next to the outputs of one CLI run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBundle {
    pub command: String,
    /// Snapshot of the effective configuration (inputs inlined).
    pub config: serde_json::Value,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Artifact paths relative to the directory holding the bundle file.
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub wall_seconds: f64,
    pub version: String,
}

/// SHA-256 hex digest of the canonical (sorted-key) JSON serialisation.
pub fn content_hash(value: &serde_json::Value) -> String {
    let canonical = canonicalize(value);
    let bytes = serde_json::to_vec(&canonical).expect("JSON values always serialise");
    hex::encode(Sha256::digest(&bytes))
}

fn canonicalize(value: &serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = serde_json::Map::new();
            for k in keys {
                out.insert(k.clone(), canonicalize(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl ExperimentBundle {
    /// Starts a bundle; the clock runs until [`ExperimentBundle::finish`].
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config_hash: content_hash(&config),
            config,
            seed,
            outputs: Vec::new(),
            started_unix: now_unix(),
            wall_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn add_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Stops the clock and writes the bundle as JSON to `path`.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.wall_seconds = now_unix() - self.started_unix;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(&self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"x": 1, "y": [1, {"b": 2, "a": 3}]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"y": [1, {"a": 3, "b": 2}], "x": 1}"#).unwrap();
        assert_eq!(content_hash(&a), content_hash(&b));
        assert_eq!(content_hash(&a).len(), 64);
    }
}
