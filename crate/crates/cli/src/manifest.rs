//! Append-only run log: one JSON line per successful command in
//! `runs.jsonl` next to the command's outputs.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "runs.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration as canonical JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time: f64,
    pub versions: BTreeMap<String, String>,
}

pub fn config_hash<T: Serialize>(config: &T) -> anyhow::Result<String> {
    let json = serde_json::to_string(config)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("sensorgraph".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "checkpoint".to_string(),
            sensorgraph::checkpoint::CHECKPOINT_FORMAT.to_string(),
        ),
    ])
}

pub struct Run {
    command: &'static str,
    started: Instant,
}

impl Run {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
        }
    }

    /// Appends the manifest line to `dir/runs.jsonl`.
    pub fn finish(
        self,
        dir: &Path,
        config_hash: String,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> anyhow::Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash,
            seed,
            inputs,
            outputs,
            wall_time: self.started.elapsed().as_secs_f64(),
            versions: versions(),
        };
        let path = dir.join(MANIFEST_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        let line = serde_json::to_string(&manifest)? + "\n";
        file.write_all(line.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

/// Directory that holds a file output's manifest.
pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
