//! Run manifests: what a command read, how it was configured, what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::CliError;
use crate::files::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
    /// Configuration after flag overrides.
    pub config: Config,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Named inputs and settings, e.g. `problems`, `policy`, `backend`.
    pub inputs: BTreeMap<String, String>,
    /// Every file the command wrote, the manifest included.
    pub artifacts: Vec<PathBuf>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config: &Config, seed: u64, started: u128) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            config: config.clone(),
            seed,
            started_unix_ms: started,
            finished_unix_ms: started,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, value: impl ToString) {
        self.inputs.insert(name.to_string(), value.to_string());
    }

    /// Stamp the finish time, list the manifest itself and write it.
    pub fn write(mut self, path: &Path) -> Result<Self, CliError> {
        self.finished_unix_ms = now_ms();
        self.artifacts.push(path.to_path_buf());
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }
}
