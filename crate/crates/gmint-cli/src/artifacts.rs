//! Artifact bookkeeping: the per-output-dir index of produced files with
//! content hashes, and the lock file that rejects concurrent invocations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const INDEX_FILE: &str = "index.json";
pub const LOCK_FILE: &str = ".gmint.lock";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

/// Maps artifact roles (`corpus`, `model`, `features`, `auditor`, `report`,
/// ...) to relative paths and content hashes inside one output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactIndex {
    pub schema_version: u32,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Dependency(format!("cannot read {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl ArtifactIndex {
    pub fn new(config_hash: &str) -> Self {
        ArtifactIndex {
            schema_version: 1,
            config_hash: config_hash.to_string(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Load the index of `output_dir`, or start a fresh one. An index
    /// written under a different config invalidates all previous artifacts.
    pub fn load_or_new(output_dir: &Path, config_hash: &str) -> Result<Self, CliError> {
        let path = output_dir.join(INDEX_FILE);
        if !path.exists() {
            return Ok(Self::new(config_hash));
        }
        let bytes = std::fs::read(&path)
            .map_err(|e| CliError::Dependency(format!("cannot read {}: {e}", path.display())))?;
        let index: ArtifactIndex = serde_json::from_slice(&bytes).map_err(|e| {
            CliError::Dependency(format!("corrupt artifact index {}: {e}", path.display()))
        })?;
        if index.config_hash != config_hash {
            crate::log::info(&format!(
                "config changed (index hash {}, current {}); starting a fresh index",
                &index.config_hash[..12],
                &config_hash[..12]
            ));
            return Ok(Self::new(config_hash));
        }
        Ok(index)
    }

    pub fn save(&self, output_dir: &Path) -> Result<(), CliError> {
        let path = output_dir.join(INDEX_FILE);
        let json = serde_json::to_vec_pretty(self).expect("index serializes");
        std::fs::write(&path, json)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    /// Record `role` as the relative path `rel`, hashing the file content.
    pub fn record(&mut self, output_dir: &Path, role: &str, rel: &str) -> Result<(), CliError> {
        let sha256 = file_sha256(&output_dir.join(rel))?;
        self.artifacts.insert(role.to_string(), ArtifactEntry { path: rel.to_string(), sha256 });
        Ok(())
    }

    /// Fetch an upstream artifact, re-checking its content hash.
    pub fn require(&self, output_dir: &Path, role: &str) -> Result<PathBuf, CliError> {
        let entry = self.artifacts.get(role).ok_or_else(|| {
            CliError::Dependency(format!(
                "missing upstream artifact {role:?}; run the producing stage first"
            ))
        })?;
        let path = output_dir.join(&entry.path);
        if !path.exists() {
            return Err(CliError::Dependency(format!(
                "artifact {role:?} ({}) is listed in the index but does not exist",
                entry.path
            )));
        }
        let actual = file_sha256(&path)?;
        if actual != entry.sha256 {
            return Err(CliError::Dependency(format!(
                "artifact {role:?} ({}) failed its hash check: expected {}, found {}",
                entry.path, entry.sha256, actual
            )));
        }
        Ok(path)
    }

    pub fn verify_all(&self, output_dir: &Path) -> Result<usize, CliError> {
        for role in self.artifacts.keys() {
            self.require(output_dir, role)?;
        }
        Ok(self.artifacts.len())
    }
}

/// Exclusive lock on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(output_dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(output_dir).map_err(|e| {
            CliError::Usage(format!("cannot create output dir {}: {e}", output_dir.display()))
        })?;
        let path = output_dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Usage(format!(
                    "output dir {} is locked by another gmint invocation (remove {} if stale)",
                    output_dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(CliError::Internal(format!(
                "cannot create lock {}: {e}",
                path.display()
            ))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
