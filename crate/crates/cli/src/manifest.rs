use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{CliError, Result};

/// Everything needed to rerun a command: arguments, resolved configuration,
/// seeds and paths.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub duration_secs: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
            duration_secs: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn config(&mut self, value: &impl Serialize) {
        self.config = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.duration_secs = self.started.map_or(0.0, |t| t.elapsed().as_secs_f64());
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::io(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
        log::info!("manifest written to {}", path.display());
        Ok(())
    }
}
