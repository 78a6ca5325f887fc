//! Run manifest: what was run, with which inputs, and digests of every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::event_sim::ConfigFile;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    /// Resolved command-line parameters, rendered as text.
    pub parameters: BTreeMap<String, String>,
    pub config: Option<ConfigFile>,
    pub outputs: Vec<OutputDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects outputs for one run and writes them into `dir`.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    outputs: Vec<OutputDigest>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `bytes` to `name`, reads the file back and records its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        let expected = sha256_hex(bytes);
        let actual = sha256_hex(&fs::read(&path)?);
        if actual != expected {
            return Err(Error::Inconsistent(format!("{} does not read back as written", path.display())));
        }
        self.outputs.push(OutputDigest {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: expected,
        });
        Ok(())
    }

    /// Writes the manifest listing every output written so far.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.outputs = self.outputs;
        let text = toml::to_string(&manifest)
            .map_err(|e| Error::Inconsistent(format!("manifest does not serialize: {e}")))?;
        fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

/// Recomputes the digests listed in a manifest; returns the files that differ.
pub fn verify(dir: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut mismatched = Vec::new();
    for out in &manifest.outputs {
        let bytes = fs::read(dir.join(&out.file))?;
        if sha256_hex(&bytes) != out.sha256 || bytes.len() as u64 != out.bytes {
            mismatched.push(out.file.clone());
        }
    }
    Ok(mismatched)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    toml::from_str(&text).map_err(|e| Error::format(format!("manifest: {}", e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = OutputSet::create(dir.path()).unwrap();
        set.write("a.csv", b"x,y\n1,2\n").unwrap();
        let m = set
            .finish(RunManifest {
                command: "test".into(),
                version: "0".into(),
                seed: Some(3),
                started: "t0".into(),
                finished: "t1".into(),
                parameters: BTreeMap::from([("k".to_string(), "v".to_string())]),
                config: None,
                outputs: Vec::new(),
            })
            .unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert!(verify(dir.path(), &m).unwrap().is_empty());
        fs::write(dir.path().join("a.csv"), b"tampered").unwrap();
        assert_eq!(verify(dir.path(), &m).unwrap(), vec!["a.csv".to_string()]);
    }
}
