use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const MANIFEST: &str = "artifacts.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub stage: String,
    pub seeds: Vec<u64>,
}

/// Content-addressed artifacts under one output directory, indexed by
/// logical name in `artifacts.json`.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    index: BTreeMap<String, Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join(MANIFEST);
        let index = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(HarnessError::io(path, e)),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn put(
        &mut self,
        name: &str,
        ext: &str,
        bytes: &[u8],
        stage: &str,
        seeds: Vec<u64>,
    ) -> Result<PathBuf> {
        let sha = sha256_hex(bytes);
        let file = format!("{name}-{}.{ext}", &sha[..16]);
        let path = self.dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
        if let Some(old) = self.index.get(name) {
            if old.file != file {
                let _ = std::fs::remove_file(self.dir.join(&old.file));
            }
        }
        self.index.insert(
            name.to_string(),
            Artifact {
                file,
                sha256: sha,
                stage: stage.into(),
                seeds,
            },
        );
        self.save()?;
        Ok(path)
    }

    fn save(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST);
        let bytes = serde_json::to_vec_pretty(&self.index)
            .map_err(|e| HarnessError::Format(e.to_string()))?;
        std::fs::write(&path, bytes).map_err(|e| HarnessError::io(path, e))
    }

    /// Path of a recorded artifact whose file still exists.
    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let a = self.index.get(name).ok_or_else(|| {
            HarnessError::Dependency(format!(
                "artifact `{name}` has not been produced in {}",
                self.dir.display()
            ))
        })?;
        let p = self.dir.join(&a.file);
        if !p.exists() {
            return Err(HarnessError::Dependency(format!(
                "artifact `{name}` is recorded but {} is missing",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn get(&self, name: &str) -> Option<&Artifact> {
        self.index.get(name)
    }

    pub fn all(&self) -> &BTreeMap<String, Artifact> {
        &self.index
    }
}
