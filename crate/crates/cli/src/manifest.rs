//! Per-run `manifest.json`: what ran, with which resolved configuration and
//! seed, and digests of every file read or written.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub speedfield: &'static str,
    pub cli: &'static str,
    pub model_format: u32,
    pub dataset_format: u32,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub deterministic: bool,
    /// SHA-256 of the compact JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub versions: Versions,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes =
        fs::read(path).with_context(|| format!("reading {} for its digest", path.display()))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects the run record while a subcommand executes.
pub struct Recorder {
    command: String,
    seed: u64,
    deterministic: bool,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, seed: u64, deterministic: bool) -> Self {
        Self {
            command: command.into(),
            seed,
            deterministic,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn write(self, out_dir: &Path) -> Result<PathBuf> {
        let config_hash = sha256_hex(serde_json::to_string(&self.config)?.as_bytes());
        let manifest = Manifest {
            command: self.command,
            args: std::env::args().collect(),
            seed: self.seed,
            deterministic: self.deterministic,
            config_hash,
            config: self.config,
            versions: Versions {
                speedfield: speedfield::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
                model_format: speedfield::nn::MODEL_FORMAT_VERSION,
                dataset_format: speedfield::training::DATASET_FORMAT_VERSION,
            },
            inputs: self
                .inputs
                .iter()
                .map(|p| digest(p))
                .collect::<Result<_>>()?,
            outputs: self
                .outputs
                .iter()
                .map(|p| digest(p))
                .collect::<Result<_>>()?,
        };
        let path = out_dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
