use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-run record written next to the artifacts it describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub started: String,
    pub finished: Option<String>,
    /// Artifact name to path, relative to the run directory.
    pub checkpoints: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Manifest {
    pub fn start(command: &str, config_hash: String) -> Self {
        Self {
            command: command.to_string(),
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: None,
            checkpoints: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn checkpoint(&mut self, name: &str, file: &str) {
        self.checkpoints.insert(name.to_string(), file.to_string());
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    /// Write through a temporary file and rename, so readers never see a
    /// half-written manifest.
    pub fn write(&mut self, dir: &Path) -> Result<(), CliError> {
        self.finished = Some(now());
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| CliError::Missing(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}
