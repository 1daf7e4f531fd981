//! Run directories and manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short hash of the canonical JSON form of a configuration.
pub fn config_hash(config: &Value) -> String {
    let text = serde_json::to_string(config).expect("JSON values serialize");
    sha256_hex(text.as_bytes())[..12].to_string()
}

/// Creates `<root>/<timestamp>_<hash>`, adding a counter on collision.
pub fn create_run_dir(root: &Path, config: &Value) -> Result<PathBuf> {
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let hash = config_hash(config);
    let mut dir = root.join(format!("{stamp}_{hash}"));
    let mut k = 1;
    while dir.exists() {
        dir = root.join(format!("{stamp}_{hash}_{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Accumulates everything the manifest records.
#[derive(Debug)]
pub struct Manifest {
    dir: PathBuf,
    command: String,
    config: Value,
    timings: Vec<(String, f64)>,
    results: BTreeMap<String, Value>,
    files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(dir: &Path, command: &str, config: Value) -> Self {
        Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            config,
            timings: Vec::new(),
            results: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Runs `f` and records its wall-clock time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push((phase.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn add_timing(&mut self, phase: &str, seconds: f64) {
        self.timings.push((phase.to_string(), seconds));
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.results.insert(key.to_string(), v);
    }

    /// Registers a file already written inside the run directory.
    pub fn add_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let rel = path.strip_prefix(&self.dir).unwrap_or(path);
        self.files.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Moves the timings and files of a sub-run into this manifest.
    pub fn absorb(&mut self, other: Manifest) {
        self.timings.extend(other.timings);
        self.files.extend(other.files);
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.json` atomically; call after every other file.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let timings: BTreeMap<_, _> = self.timings.iter().cloned().collect();
        let doc = serde_json::json!({
            "tool": "nibrom",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "timings_seconds": timings,
            "results": self.results,
            "files": self.files,
        });
        let path = self.dir.join(MANIFEST_NAME);
        nibrom_core::io::write_json(&path, &doc)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_short() {
        let v = serde_json::json!({"a": 1, "b": [1, 2]});
        assert_eq!(config_hash(&v), config_hash(&v.clone()));
        assert_eq!(config_hash(&v).len(), 12);
        assert_ne!(config_hash(&v), config_hash(&serde_json::json!({"a": 2})));
    }

    #[test]
    fn manifest_lists_files_with_checksums() {
        let root = tempfile::tempdir().unwrap();
        let dir = create_run_dir(root.path(), &serde_json::json!({})).unwrap();
        std::fs::write(dir.join("x.txt"), b"hello").unwrap();
        let mut m = Manifest::new(&dir, "test", serde_json::json!({}));
        m.add_file(&dir.join("x.txt")).unwrap();
        let path = m.finish().unwrap();
        let doc: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!(doc["files"][0]["path"], "x.txt");
        assert_eq!(
            doc["files"][0]["sha256"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
