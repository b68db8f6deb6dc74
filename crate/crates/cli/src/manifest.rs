//! Run manifests: what a command read, what it wrote and how it was
//! configured, written as JSON next to the primary output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use owsc_core::dataset::FEATURE_FILE_VERSION;
use owsc_core::encoder::CHECKPOINT_VERSION;
use owsc_core::trainer::STATE_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_digest(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

/// Hash of the config's canonical JSON (object keys sorted).
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("JSON values always serialize"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub owsc: String,
    pub feature_format: u32,
    pub checkpoint_format: u32,
    pub state_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            owsc: env!("CARGO_PKG_VERSION").to_string(),
            feature_format: FEATURE_FILE_VERSION,
            checkpoint_format: CHECKPOINT_VERSION,
            state_format: STATE_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub versions: Versions,
    /// The fully resolved configuration, defaults and overrides applied.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_ms: f64,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>) -> Self {
        let config = serde_json::to_value(config).expect("configs serialize to JSON");
        RunManifest {
            command: command.to_string(),
            config_hash: config_hash(&config),
            seed,
            versions: Versions::default(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_ms: 0.0,
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(file_digest(path)?);
        Ok(())
    }

    pub fn write(&mut self, path: &Path, elapsed: Duration) -> CliResult<()> {
        self.wall_clock_ms = elapsed.as_secs_f64() * 1e3;
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// `<path>.run.json`
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    output.with_file_name(name)
}
