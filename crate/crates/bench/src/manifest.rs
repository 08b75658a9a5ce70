//! Run manifests: a JSON sidecar next to every output file recording how it
//! was produced.
//!
//! The manifest hash covers the command, the resolved parameters, the seed
//! and the input file digests — everything that determines the outputs.
//! Timestamps and wall-clock columns are deliberately outside it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub hash: String,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Sidecar path for an output: `<file>.manifest.json`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Collects inputs while a command runs and writes sidecars at the end.
#[derive(Debug)]
pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    started: f64,
    inputs: Vec<FileDigest>,
}

impl ManifestBuilder {
    pub fn start(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            seed,
            started: now(),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(file_digest(path)?);
        Ok(())
    }

    fn hash(&self, params: &BTreeMap<String, String>) -> String {
        let mut h = Sha256::new();
        h.update(format!("v{MANIFEST_VERSION}\n{}\n", self.command));
        for (k, v) in params {
            h.update(format!("{k}={v}\n"));
        }
        h.update(format!("seed={:?}\n", self.seed));
        for f in &self.inputs {
            h.update(format!("input={}\n", f.sha256));
        }
        format!("{:x}", h.finalize())
    }

    /// Writes one sidecar per output and returns the manifest.
    pub fn finish(self, params: &BTreeMap<String, String>, outputs: &[PathBuf]) -> Result<RunManifest> {
        let manifest = RunManifest {
            version: MANIFEST_VERSION,
            hash: self.hash(params),
            command: self.command,
            params: params.clone(),
            seed: self.seed,
            started_unix: self.started,
            finished_unix: now(),
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| file_digest(p)).collect::<Result<_>>()?,
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        for out in outputs {
            let side = sidecar_path(out);
            std::fs::write(&side, &json).with_context(|| format!("writing {}", side.display()))?;
        }
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn hash_ignores_timestamps_but_not_params() {
        let mut p = BTreeMap::new();
        p.insert("n".to_string(), "20".to_string());
        let a = ManifestBuilder::start("generate", Some(1)).hash(&p);
        let b = ManifestBuilder::start("generate", Some(1)).hash(&p);
        assert_eq!(a, b);
        p.insert("n".to_string(), "21".to_string());
        assert_ne!(a, ManifestBuilder::start("generate", Some(1)).hash(&p));
        assert_ne!(a, ManifestBuilder::start("generate", Some(2)).hash(&BTreeMap::new()));
    }
}
