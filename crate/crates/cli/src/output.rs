//! Outputs are staged in memory and written only once every stage has
//! succeeded, followed by a manifest recording how to reproduce them.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Reads an input file and remembers its digest.
pub struct Inputs(Vec<InputRecord>);

impl Inputs {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.0.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        Ok(bytes)
    }
}

#[derive(Serialize)]
struct OutputRecord<'a> {
    file: &'a str,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    inputs: &'a [InputRecord],
    outputs: Vec<OutputRecord<'a>>,
}

pub struct Staged {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_with<F>(&mut self, name: impl Into<String>, write: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> causal_panel::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.add(name, buf);
        Ok(())
    }

    /// Writes every staged file and then `manifest.json`.
    pub fn commit(self, command: &str, config: &RunConfig, inputs: &Inputs) -> Result<Vec<PathBuf>> {
        let config_text = config.to_toml()?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            library_version: causal_panel::VERSION,
            command,
            seed: config.effective_seed(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            config,
            inputs: &inputs.0,
            outputs: self
                .files
                .iter()
                .map(|(name, bytes)| OutputRecord {
                    file: name,
                    sha256: sha256_hex(bytes),
                })
                .collect(),
        };
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
        manifest_bytes.push(b'\n');
        let mut written = Vec::with_capacity(self.files.len() + 1);
        for (name, bytes) in self.files.iter().map(|(n, b)| (n.as_str(), b)).chain([("manifest.json", &manifest_bytes)]) {
            let path = self.dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}
