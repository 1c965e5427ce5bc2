//! Run output directories: artifact bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_text;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a JSON value in its compact serialization (object keys sorted by serde_json).
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: Option<String>,
    pub config: Option<serde_json::Value>,
    pub seeds: Vec<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub checks: Vec<CheckRecord>,
    pub passed: bool,
}

/// Collects artifacts and checks for one run into `root`.
pub struct RunRecorder {
    root: PathBuf,
    command: String,
    config: Option<serde_json::Value>,
    seeds: Vec<u64>,
    started: f64,
    artifacts: Vec<String>,
    checks: Vec<CheckRecord>,
    /// Prefix for check names and artifact paths, e.g. `c3.bang_bang` and `c3/bang_bang/`.
    scope: Option<(String, String)>,
}

impl RunRecorder {
    pub fn new(root: &Path, command: &str, config: Option<serde_json::Value>) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            config,
            seeds: Vec::new(),
            started: unix_now(),
            artifacts: Vec::new(),
            checks: Vec::new(),
            scope: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn add_seed(&mut self, seed: u64) {
        if !self.seeds.contains(&seed) {
            self.seeds.push(seed);
        }
    }

    /// Until cleared, check names get `name.` prepended and artifacts go under `dir/`.
    pub fn set_scope(&mut self, name: &str, dir: &str) {
        self.scope = Some((name.to_string(), dir.to_string()));
    }

    pub fn clear_scope(&mut self) {
        self.scope = None;
    }

    /// Writes `text` to `root/rel` and lists it.
    pub fn write(&mut self, rel: &str, text: &str) -> Result<PathBuf> {
        let rel = match &self.scope {
            Some((_, dir)) => format!("{dir}/{rel}"),
            None => rel.to_string(),
        };
        let rel = rel.as_str();
        let path = self.root.join(rel);
        write_text(&path, text)?;
        if !self.artifacts.iter().any(|a| a == rel) {
            self.artifacts.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, &text)
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> bool {
        let name = name.into();
        let rec = CheckRecord {
            name: match &self.scope {
                Some((prefix, _)) => format!("{prefix}.{name}"),
                None => name,
            },
            passed,
            detail: detail.into(),
        };
        log::info!("[{}] {}: {}", if passed { "pass" } else { "FAIL" }, rec.name, rec.detail);
        self.checks.push(rec);
        passed
    }

    pub fn checks(&self) -> &[CheckRecord] {
        &self.checks
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Writes the manifest atomically (temporary file, then rename).
    pub fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            tool: "hjblab".into(),
            version: TOOL_VERSION.into(),
            command: self.command,
            config_hash: self.config.as_ref().map(config_hash),
            config: self.config,
            seeds: self.seeds,
            started_unix: self.started,
            finished_unix: unix_now(),
            artifacts: self.artifacts,
            passed: self.checks.iter().all(|c| c.passed),
            checks: self.checks,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let tmp = self.root.join(format!(".{MANIFEST_FILE}.tmp"));
        let dest = self.root.join(MANIFEST_FILE);
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
