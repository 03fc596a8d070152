//! The `cikan` pipeline as a library: each subcommand is a function that
//! reads and writes files and returns a small report, so tests can drive the
//! pipeline without spawning processes.

pub mod commands;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use commands::*;
pub use config::{Config, NetworkConfig};

/// Failure classes with stable process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("governor infeasible: {0}")]
    Infeasible(String),
    #[error("{0:#}")]
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Fully resolved arguments; re-running with these reproduces the outputs.
    pub parameters: serde_json::Value,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    pub fn start(command: &str, config_path: Option<&Path>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            parameters: serde_json::Value::Null,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started: now(),
            finished: String::new(),
        }
    }

    pub fn finish(mut self, path: &Path) -> Result<PathBuf, CliError> {
        self.finished = now();
        write_json(path, &self)?;
        Ok(path.to_path_buf())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// `<file>.manifest.json` for a file output.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    with_suffix(out, ".manifest.json")
}

/// Appends `suffix` to the full file name (`a.csv` -> `a.csv.meta.json`).
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(anyhow::Error::from)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))?;
    }
    std::fs::write(path, bytes).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()).into())
}
