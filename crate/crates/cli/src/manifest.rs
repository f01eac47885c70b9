//! Run manifests: what was run, with which seeds, and what it produced.
//!
//! A manifest holds no timestamps, absolute paths or thread counts, so two
//! runs of the same scenario and seed produce byte-identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub scenario_sha256: String,
    pub master_seed: u64,
    /// Seeds handed to each pipeline stage, derived from the master seed.
    pub stage_seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<ArtifactRecord>,
    pub versions: BTreeMap<String, String>,
    /// Headline numbers, also found in the report.
    pub summary: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, scenario: &str, scenario_sha256: &str, master_seed: u64) -> Self {
        let versions = BTreeMap::from([
            ("qdsource".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("timetag_format".to_string(), "PTAG0001 v1".to_string()),
        ]);
        Self {
            command: command.into(),
            scenario: scenario.into(),
            scenario_sha256: scenario_sha256.into(),
            master_seed,
            stage_seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            versions,
            summary: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest is plain data");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Recomputes every artifact hash and returns the paths that differ.
    pub fn verify(&self, out_dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|a| {
                std::fs::read(out_dir.join(&a.path)).map_or(true, |b| sha256_hex(&b) != a.sha256)
            })
            .map(|a| a.path.clone())
            .collect()
    }
}

/// Writes artifacts into one directory and records them in a manifest.
pub struct ArtifactWriter {
    dir: PathBuf,
    pub manifest: RunManifest,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.manifest.artifacts.retain(|a| a.path != name);
        self.manifest.artifacts.push(ArtifactRecord {
            path: name.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    /// Writes the manifest itself (not listed in its own artifact table).
    pub fn finish(self) -> Result<RunManifest, CliError> {
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest.to_json()).map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path(), RunManifest::new("run", "demo", "abc", 3)).unwrap();
        w.manifest.stage_seeds.insert("emitter".into(), 42);
        w.write("a.txt", b"hello").unwrap();
        let m = w.finish().unwrap();
        assert_eq!(
            m.artifacts[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(RunManifest::from_json(&text).unwrap(), m);
        assert!(m.verify(dir.path()).is_empty());
        std::fs::write(dir.path().join("a.txt"), b"changed").unwrap();
        assert_eq!(m.verify(dir.path()), vec!["a.txt".to_string()]);
    }
}
