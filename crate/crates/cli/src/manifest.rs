//! Run manifests: every command writes one next to its outputs, recording
//! the full configuration, seeds, inputs, and a checksum of every produced
//! file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use nicg_core::Result;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Serialize)]
pub struct FileEntry {
    pub path: String,
    pub crc32: String,
    pub bytes: u64,
}

pub struct ManifestBuilder {
    command: String,
    config: Value,
    inputs: Vec<FileEntry>,
    started_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn entry(path: &Path) -> Result<FileEntry> {
    let bytes = fs::read(path)?;
    Ok(FileEntry {
        path: path.display().to_string(),
        crc32: format!("{:08x}", crc32fast::hash(&bytes)),
        bytes: bytes.len() as u64,
    })
}

impl ManifestBuilder {
    pub fn start(command: &str, config: impl Serialize) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            inputs: Vec::new(),
            started_unix_ms: now_ms(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(entry(path)?);
        Ok(())
    }

    pub fn input_dir(&mut self, dir: &Path, files: &[&str]) -> Result<()> {
        for name in files {
            let path = dir.join(name);
            if path.exists() {
                self.input(&path)?;
            }
        }
        Ok(())
    }

    /// Checksum the produced files and write `manifest.json` beside them.
    pub fn finish(self, out_dir: &Path, outputs: &[PathBuf]) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            inputs: self.inputs,
            outputs: outputs
                .iter()
                .map(|p| entry(p))
                .collect::<Result<Vec<_>>>()?,
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: now_ms(),
        };
        fs::write(
            out_dir.join("run_manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}
