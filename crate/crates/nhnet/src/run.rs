//! Output directories and their manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io::{content_hash, write_bytes, write_json};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to content hash.
    pub outputs: BTreeMap<String, String>,
}

/// Collects everything a command reads and writes under its `--out`
/// directory, then records it in `manifest.json`.
#[derive(Debug)]
pub struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    pub fn new(dir: &Path, command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Run> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let config = serde_json::to_value(config).map_err(|e| CliError::data(e.to_string()))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config,
                seed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        })
    }

    /// Records the hash of an input file's raw bytes.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), content_hash(&bytes));
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_bytes(&path, bytes)?;
        self.manifest.outputs.insert(name.into(), content_hash(bytes));
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, item: &impl Serialize) -> Result<PathBuf> {
        let value = serde_json::to_value(item).map_err(|e| CliError::data(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::data(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<PathBuf> {
        self.write(name, &crate::io::jsonl_bytes(items)?)
    }

    pub fn finish(self) -> Result<Manifest> {
        write_json(&self.dir.join(MANIFEST), &self.manifest)?;
        Ok(self.manifest)
    }
}
