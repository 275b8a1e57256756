use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::files::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Written next to every run's outputs. Output files are listed by name with
/// their SHA-256, so two runs can be compared without diffing the files.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub args: Vec<String>,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Option<&Path>, out_dir: &Path, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.into(),
            args: Vec::new(),
            config: config.map(Path::to_path_buf),
            inputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
            seed,
            outputs: Vec::new(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.args.push(format!("{key}={value}"));
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    /// Hashes the named files in `out_dir` and writes the manifest there.
    pub fn finish(mut self, outputs: &[&str]) -> Result<Self, CliError> {
        for name in outputs {
            let path = self.out_dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            self.outputs.push(OutputDigest {
                file: (*name).into(),
                bytes: bytes.len() as u64,
                sha256: format!("{:x}", Sha256::digest(&bytes)),
            });
        }
        let value = serde_json::to_value(&self).expect("manifest serializes");
        write_json(&self.out_dir.join(MANIFEST_FILE), &value)?;
        Ok(self)
    }
}
