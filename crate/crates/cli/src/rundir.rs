//! Output directory of one command, with a manifest of what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub stream: String,
    pub files: Vec<String>,
    pub results: BTreeMap<String, toml::Value>,
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path of `name` inside the directory, recorded in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.file(name);
        std::fs::write(&path, contents)?;
        Ok(path)
    }

    pub fn write_manifest(&mut self, mut manifest: Manifest) -> CliResult<PathBuf> {
        manifest.files = self.files.clone();
        manifest.files.push("manifest.toml".into());
        let text = toml::to_string(&manifest).expect("manifest is serializable");
        let path = self.root.join("manifest.toml");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
