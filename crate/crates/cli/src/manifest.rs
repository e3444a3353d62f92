use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::invocation::Invocation;

/// Bumped whenever an output schema changes.
pub const ARTIFACT_VERSION: &str = "1.0.0";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub tool_version: String,
    pub command: String,
    /// SHA-256 of the canonical (sorted-key, compact) JSON of the effective config.
    pub config_hash: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub invocation: Invocation,
    pub outputs: Vec<OutputRecord>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

/// Canonical JSON: keys sorted at every level, no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json::Value keeps object keys in a BTreeMap, so re-serialising sorts them
    let v = serde_json::to_value(value).expect("serialisable value");
    serde_json::to_string(&v).expect("serialisable value")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(canonical_json(config).as_bytes())
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn record_outputs(dir: &Path, files: &[String]) -> CliResult<Vec<OutputRecord>> {
    files
        .iter()
        .map(|f| {
            let path = dir.join(f);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            Ok(OutputRecord { file: f.clone(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
        })
        .collect()
}

pub fn load_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let actual = config_hash(&m.invocation.config);
    if actual != m.config_hash {
        return Err(CliError::config(format!(
            "{}: embedded config hashes to {actual}, manifest records {}",
            path.display(),
            m.config_hash
        )));
    }
    Ok(m)
}
