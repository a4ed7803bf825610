//! Run manifest: one record per executed stage.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fingerprint;

use super::stages::StageKind;

pub const MANIFEST_VERSION: u32 = 1;

/// A file and its SHA-256. Paths inside the output directory are relative
/// to it; inputs from outside the run are absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(out_dir: &Path, path: &str) -> std::io::Result<FileRecord> {
        Ok(FileRecord {
            path: path.to_string(),
            sha256: fingerprint::file(resolve(out_dir, path))?,
        })
    }

    pub fn is_external(&self) -> bool {
        Path::new(&self.path).is_absolute()
    }
}

pub(crate) fn resolve(out_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    /// The stage's full parameters; with the inputs and seed they are
    /// enough to re-run it.
    pub params: Value,
    pub config_digest: String,
    pub seed: u64,
    pub elapsed_ms: u64,
}

impl StageRecord {
    pub fn label(&self) -> String {
        match &self.factor {
            Some(f) => format!("{}[{f}]", self.stage.name()),
            None => self.stage.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub seed: u64,
    /// Digest of the whole resolved config.
    pub config_digest: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<RunManifest> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest, String> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| e.to_string())?;
        RunManifest::from_json(&text).map_err(|e| e.to_string())
    }

    pub fn stage(&self, stage: StageKind, factor: Option<&str>) -> Option<&StageRecord> {
        self.stages
            .iter()
            .find(|s| s.stage == stage && s.factor.as_deref() == factor)
    }

    /// Checks stage order and that every run-internal input is the output
    /// of an earlier stage with the same fingerprint. Shared stages come
    /// first in pipeline order; each factor's stages follow in order.
    pub fn validate_chain(&self) -> Result<(), String> {
        let mut produced: HashMap<&str, &str> = HashMap::new();
        let mut last_shared: Option<StageKind> = None;
        let mut last_by_factor: HashMap<&str, StageKind> = HashMap::new();
        for record in &self.stages {
            let label = record.label();
            match &record.factor {
                None => {
                    if !last_by_factor.is_empty() {
                        return Err(format!("shared stage {label} runs after a factor stage"));
                    }
                    if record.stage.is_per_factor() || last_shared.is_some_and(|k| k >= record.stage) {
                        return Err(format!("stage {label} is out of order"));
                    }
                    last_shared = Some(record.stage);
                }
                Some(f) => {
                    let prev = last_by_factor.get(f.as_str()).copied();
                    if !record.stage.is_per_factor() || prev.is_some_and(|k| k >= record.stage) {
                        return Err(format!("stage {label} is out of order"));
                    }
                    last_by_factor.insert(f, record.stage);
                }
            }
            if record.config_digest != fingerprint::bytes(record.params.to_string().as_bytes()) {
                return Err(format!("stage {label}: config digest does not match its parameters"));
            }
            for input in &record.inputs {
                if input.is_external() {
                    continue;
                }
                match produced.get(input.path.as_str()) {
                    Some(digest) if *digest == input.sha256 => {}
                    Some(_) => {
                        return Err(format!(
                            "stage {label}: input {} differs from the file its producer wrote",
                            input.path
                        ))
                    }
                    None => {
                        return Err(format!(
                            "stage {label}: input {} was not produced by an earlier stage",
                            input.path
                        ))
                    }
                }
            }
            for output in &record.outputs {
                if produced.insert(&output.path, &output.sha256).is_some() {
                    return Err(format!("stage {label}: output {} written twice", output.path));
                }
            }
        }
        Ok(())
    }

    /// Checks that every recorded output still has its recorded digest.
    pub fn verify_outputs(&self, out_dir: &Path) -> Result<(), String> {
        for record in &self.stages {
            for output in &record.outputs {
                let current = FileRecord::of(out_dir, &output.path)
                    .map_err(|e| format!("{}: {e}", output.path))?;
                if current.sha256 != output.sha256 {
                    return Err(format!("{} changed since stage {}", output.path, record.label()));
                }
            }
        }
        Ok(())
    }
}
