use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RunConfig, MANIFEST_FILE};
use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Outcome of one unit of work (an image, or a compound for hit validation).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageStatus {
    pub image_id: String,
    /// Input file name, without directories.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub input: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, usize>,
    /// Output-relative path → SHA-256.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, String>,
}

impl ImageStatus {
    pub fn new(image_id: &str, input: &Path) -> Self {
        Self {
            image_id: image_id.to_string(),
            input: input
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            status: "ok".into(),
            ..Default::default()
        }
    }

    pub fn fail(&mut self, e: &Error) {
        self.status = "error".into();
        self.error = Some(strip_dirs(e));
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

// Keeps manifests independent of where the run lives on disk.
fn strip_dirs(e: &Error) -> String {
    match e {
        Error::FileNotFound(p) => format!(
            "file not found: {}",
            p.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
        ),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub backends: BTreeMap<String, String>,
    pub images: Vec<ImageStatus>,
    /// Stage-level outputs, output-relative path → SHA-256.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, String>,
}

impl StageRecord {
    pub fn new(stage: &str, _cfg: &RunConfig) -> Self {
        Self {
            stage: stage.to_string(),
            images: Vec::new(),
            ..Default::default()
        }
    }

    pub fn failures(&self) -> usize {
        self.images.iter().filter(|i| !i.is_ok()).count()
    }
}

/// `manifest.json`: run identity plus one record per stage. Contains no
/// timestamps or absolute paths, so identical runs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            seed: cfg.seed(),
            stages: BTreeMap::new(),
        }
    }

    pub fn read(out: &Path) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::FileNotFound(path));
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Records `stage` in the output directory's manifest. A manifest from a
    /// different configuration is replaced rather than merged.
    pub fn update(out: &Path, cfg: &RunConfig, stage: StageRecord) -> Result<Self> {
        let mut m = match Self::read(out) {
            Ok(m) if m.config_hash == cfg.hash() => m,
            _ => Self::new(cfg),
        };
        m.stages.insert(stage.stage.clone(), stage);
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(MANIFEST_FILE), m.to_bytes()?)?;
        Ok(m)
    }
}
