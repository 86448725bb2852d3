//! `manifest.json`: what each pipeline stage read, wrote and with which
//! parameters.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the pipeline output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub params: serde_json::Value,
    pub artifacts: Vec<Artifact>,
    /// Numbers the stage reports besides its files.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub metrics: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub seed: u64,
    pub stages: Vec<Stage>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

impl Artifact {
    pub fn digest(root: &Path, rel: &str) -> Result<Self> {
        let (bytes, sha256) = sha256_file(&root.join(rel))?;
        Ok(Self {
            path: rel.to_string(),
            bytes,
            sha256,
        })
    }
}

impl PipelineManifest {
    /// Writes the manifest after re-checking that every artifact still exists
    /// with the recorded digest.
    pub fn write(&self, root: &Path) -> Result<()> {
        for stage in &self.stages {
            for a in &stage.artifacts {
                let (_, sha) = sha256_file(&root.join(&a.path))?;
                ensure!(sha == a.sha256, "{} changed after stage {}", a.path, stage.name);
            }
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(root.join(FILE_NAME), text)?;
        Ok(())
    }
}
