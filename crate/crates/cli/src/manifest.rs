use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use compslu::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full command line; `compslu rerun` replays it.
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub resolved: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub code_version: String,
    pub started: String,
    pub finished: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            config_path: None,
            resolved: BTreeMap::new(),
            seed: None,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished = now();
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::Parse(e.to_string()))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
