//! Run manifests: what was run, on which inputs, and the hash of every file
//! it produced.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use phaseforge::fsutil::write_atomic;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub args: Vec<String>,
    pub config_sha256: Option<String>,
    pub dataset_sha256: Option<String>,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Files read, with paths as given on the command line.
    #[serde(default)]
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Seconds since the epoch; `SOURCE_DATE_EPOCH` pins it for reproducible
/// manifests.
pub fn now_unix() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return v;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

impl RunManifest {
    pub fn new(command: &str, started_unix: u64) -> Self {
        Self {
            version: MANIFEST_VERSION,
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_sha256: None,
            dataset_sha256: None,
            seeds: Vec::new(),
            started_unix,
            finished_unix: started_unix,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(Artifact {
            path: path.to_string_lossy().into_owned(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Hashes `files`, stamps the finish time and writes the manifest to
    /// `path`. Artifact paths are stored relative to the manifest.
    pub fn finish(mut self, path: &Path, files: &[PathBuf]) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        self.artifacts = files
            .iter()
            .map(|f| {
                let bytes = std::fs::read(f).with_context(|| format!("reading {}", f.display()))?;
                Ok(Artifact {
                    path: relative(base, f),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<_>>()?;
        self.finished_unix = now_unix().max(self.started_unix);
        let mut json = serde_json::to_string_pretty(&self)?;
        json.push('\n');
        write_atomic(path, json.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Recomputes every artifact hash; returns the paths that are missing or
/// no longer match.
pub fn verify(path: &Path) -> Result<Vec<String>> {
    let m = RunManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(m.artifacts
        .iter()
        .filter(|a| match std::fs::read(base.join(&a.path)) {
            Ok(b) => sha256_hex(&b) != a.sha256 || b.len() as u64 != a.bytes,
            Err(_) => true,
        })
        .map(|a| a.path.clone())
        .collect())
}

/// `out.txt` -> `out.txt.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("sub/a.txt");
        write_atomic(&f, b"one").unwrap();
        let mp = dir.path().join("manifest.json");
        let m = RunManifest::new("test", 5).finish(&mp, &[f.clone()]).unwrap();
        assert_eq!(m.artifacts[0].path, "sub/a.txt");
        assert!(verify(&mp).unwrap().is_empty());
        std::fs::write(&f, b"two").unwrap();
        assert_eq!(verify(&mp).unwrap(), vec!["sub/a.txt".to_string()]);
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar(Path::new("d/x.txt")), PathBuf::from("d/x.txt.manifest.json"));
    }
}
