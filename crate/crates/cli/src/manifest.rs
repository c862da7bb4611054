//! Output directories with a reproducibility manifest.
//!
//! Files are staged as `<name>.partial`, the manifest is written, and only
//! then are the staged files renamed into place.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seconds since the epoch; `SOURCE_DATE_EPOCH` wins when set so manifests
/// can be reproduced byte for byte.
pub fn unix_now() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return v;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSource {
    /// File path, or `preset:<name>`.
    pub source: String,
    /// Hash of the file bytes (of the canonical JSON for presets).
    pub sha256: String,
    /// Hash of the canonical JSON after overrides such as `--seed`;
    /// identical to `scenario.json` in the output directory.
    pub canonical_sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub scenario: ScenarioSource,
    pub seed: u64,
    pub threads: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputFile>,
}

/// Files collected in memory until [`Staging::commit`].
pub struct Staging {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Staging {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn commit(self, mut manifest: RunManifest) -> std::io::Result<RunManifest> {
        fs::create_dir_all(&self.dir)?;
        for (name, bytes) in &self.files {
            fs::write(self.dir.join(format!("{name}.partial")), bytes)?;
            manifest.outputs.push(OutputFile { file: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        }
        manifest.finished_unix = unix_now();
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        for (name, _) in &self.files {
            fs::rename(self.dir.join(format!("{name}.partial")), self.dir.join(name))?;
        }
        Ok(manifest)
    }
}
