//! Per-run manifests: config hash, input and output digests, counts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub counts: BTreeMap<String, u64>,
}

pub fn digest_file(path: &Path) -> anyhow::Result<FileDigest> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let bytes = io::copy(&mut file, &mut hasher).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.to_owned(),
        sha256: hex(&hasher.finalize()),
        bytes,
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the effective configuration of a command.
pub fn config_hash<T: Serialize>(effective: &T) -> String {
    let bytes = serde_json::to_vec(effective).expect("config serializes");
    hex(&Sha256::digest(bytes))
}

/// Where the manifest for `output` goes.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.to_owned(),
            config_hash,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn count(&mut self, key: &str, value: usize) {
        self.counts.insert(key.to_owned(), value as u64);
    }

    /// Writes next to the primary output and returns the manifest path.
    pub fn write(&self, primary_output: &Path) -> anyhow::Result<PathBuf> {
        let path = manifest_path(primary_output);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
