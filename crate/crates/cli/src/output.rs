//! Atomic file output and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub source: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    /// False for outputs that embed wall-clock timings.
    pub deterministic: bool,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub inputs: Vec<InputRecord>,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputRecord>,
    pub exit_code: i32,
    pub wall_time_s: f64,
}

/// Collects inputs and outputs for the manifest of one command.
pub struct Recorder {
    command: String,
    started: Instant,
    inputs: Vec<InputRecord>,
    outputs: Vec<OutputRecord>,
    pub config: serde_json::Value,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, source: &str, bytes: &[u8]) {
        self.inputs.push(InputRecord {
            source: source.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8], deterministic: bool) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(OutputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
            deterministic,
        });
        Ok(())
    }

    pub fn finish(self, exit_code: i32, target: Option<PathBuf>) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            config: self.config,
            outputs: self.outputs,
            exit_code,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        match target {
            Some(path) => write_atomic(&path, &to_json(&manifest)?),
            None => {
                eprintln!("{}", serde_json::to_string(&manifest)?);
                Ok(())
            }
        }
    }
}
