use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use jrrelp_core::digest::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the binary name, enough to rerun the command.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub vocab_hash: Option<String>,
    /// Input file path to SHA-256 of its contents.
    pub datasets: BTreeMap<String, String>,
    /// Output file name, relative to the out dir, to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            seed: None,
            config_hash: None,
            vocab_hash: None,
            datasets: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            started_unix: now_unix(),
            finished_unix: 0,
        }
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.datasets.insert(path.display().to_string(), sha256_hex(bytes));
    }

    pub fn finish(mut self, out: &Path) -> Result<(), CliError> {
        self.finished_unix = now_unix();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n";
        write_file(&out.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Recompute every listed artifact hash under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for (name, expected) in &self.artifacts {
            let path = dir.join(name);
            let bytes = read_bytes(&path)?;
            if sha256_hex(&bytes) != *expected {
                return Err(CliError::Manifest(format!(
                    "{} does not match the hash recorded in {}",
                    path.display(),
                    dir.join(MANIFEST_FILE).display()
                )));
            }
        }
        Ok(())
    }
}

/// Check `dir`'s manifest when it has one.
pub fn verify_dir(dir: &Path) -> Result<Option<RunManifest>, CliError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = read_text(&path)?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
    manifest.verify(dir)?;
    Ok(Some(manifest))
}

/// Write `bytes` into `out` and list the file in `manifest`.
pub fn emit(manifest: &mut RunManifest, out: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    let path = out.join(name);
    write_file(&path, bytes.as_ref())?;
    manifest.artifacts.insert(name.to_string(), sha256_hex(bytes.as_ref()));
    Ok(path)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
