//! Run manifests: config echo, versions, input and artifact hashes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("artifact {0} is missing")]
    Missing(String),
    #[error("artifact {path} hash {actual} does not match recorded {expected}")]
    HashMismatch { path: String, expected: String, actual: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub versions: BTreeMap<String, String>,
    pub model: String,
    pub config: serde_json::Value,
    /// Hashes of the inputs that determine the run.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<ArtifactEntry>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(model: &str, config: serde_json::Value) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string());
        Self {
            tool: "stitch".into(),
            versions,
            model: model.to_string(),
            config,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn record_artifact(&mut self, path: &str, bytes: &[u8]) {
        self.artifacts.push(ArtifactEntry {
            path: path.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    pub fn artifact(&self, path: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.path == path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Checks that every artifact exists under `root` with its recorded hash.
    pub fn verify(&self, root: &Path) -> Result<(), ManifestError> {
        for a in &self.artifacts {
            let bytes = std::fs::read(root.join(&a.path)).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => ManifestError::Missing(a.path.clone()),
                _ => ManifestError::Io(e),
            })?;
            let actual = sha256_hex(&bytes);
            if actual != a.sha256 {
                return Err(ManifestError::HashMismatch { path: a.path.clone(), expected: a.sha256.clone(), actual });
            }
        }
        Ok(())
    }
}
