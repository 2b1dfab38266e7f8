//! Run manifests: a JSON snapshot of everything that went into a run,
//! written atomically before any work starts and never touched again.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::Settings;

/// Version stamp for the on-disk artifact layout (manifest + fixed output
/// names). Bump when a file name or schema changes incompatibly.
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    /// Subcommand name.
    pub command: String,
    pub seed: u64,
    /// Wall-clock start, milliseconds since the Unix epoch. The manifest is
    /// immutable once written, so it records when the run began rather than
    /// how long it took; durations live in the command's stdout log.
    pub started_unix_ms: u128,
    /// Label -> input path, e.g. "train" -> "data/train.txt".
    pub inputs: BTreeMap<String, String>,
    /// Label -> output path under the run directory.
    pub outputs: BTreeMap<String, String>,
    /// The fully resolved configuration after all override layers.
    pub config: Settings,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: Settings) -> RunManifest {
        RunManifest {
            artifact_version: ARTIFACT_VERSION,
            command: command.to_string(),
            seed,
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config,
        }
    }

    pub fn input(mut self, label: &str, path: &Path) -> Self {
        self.inputs.insert(label.to_string(), path.display().to_string());
        self
    }

    pub fn output(mut self, label: &str, file_name: &str) -> Self {
        self.outputs.insert(label.to_string(), file_name.to_string());
        self
    }

    /// Create the run directory and write `run_manifest.json` atomically.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
        let path = out_dir.join("run_manifest.json");
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        Ok(path)
    }
}

/// Write via a temporary sibling and rename, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", tmp.display()))?;
    Ok(())
}
