//! Output directory handling and run manifests.

use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reject absolute paths and any `..` so a relative name stays inside its base.
pub fn check_relative(name: &str) -> Result<&Path, Failure> {
    let p = Path::new(name);
    let ok = !name.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(p)
    } else {
        Err(Failure::usage(format!("`{name}` must be a relative path inside the output directory")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    /// Arguments that reproduce the run, minus output location flags.
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

/// Collects output files for one run and writes them with a manifest.
pub struct Run {
    dir: PathBuf,
    subcommand: String,
    args: Vec<String>,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<FileRecord>,
    files: Vec<(String, Vec<u8>)>,
}

impl Run {
    pub fn new(out_dir: &Path, run_name: &str, subcommand: &str, args: Vec<String>, seed: u64) -> Result<Self, Failure> {
        let dir = out_dir.join(check_relative(run_name)?);
        Ok(Self {
            dir,
            subcommand: subcommand.into(),
            args,
            seed,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            files: Vec::new(),
        })
    }

    pub fn config(&mut self, value: impl Serialize) {
        self.config = serde_json::to_value(value).expect("config snapshot serializes");
    }

    /// Read an input file and record its hash.
    pub fn input(&mut self, path: &str) -> Result<String, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read `{path}`: {e}")))?;
        self.inputs.push(FileRecord { path: path.into(), sha256: sha256_hex(text.as_bytes()), bytes: text.len() });
        Ok(text)
    }

    /// Record an input that was loaded by other means, if it is a file.
    pub fn input_if_file(&mut self, path: &str) -> Result<(), Failure> {
        if Path::new(path).is_file() {
            self.input(path)?;
        }
        Ok(())
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    /// Write all files and the manifest; returns the run directory.
    pub fn finish(self) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", self.dir.display())))?;
        let mut outputs = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = self.dir.join(check_relative(name)?);
            std::fs::write(&path, bytes).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
            outputs.push(FileRecord { path: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        }
        let manifest = RunManifest {
            tool: "cycloid",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            args: self.args,
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join(MANIFEST_NAME);
        std::fs::write(&path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_only() {
        assert!(check_relative("a/b.csv").is_ok());
        assert!(check_relative("./a").is_ok());
        assert!(check_relative("../a").is_err());
        assert!(check_relative("a/../../b").is_err());
        assert!(check_relative("/tmp/a").is_err());
        assert!(check_relative("").is_err());
    }
}
