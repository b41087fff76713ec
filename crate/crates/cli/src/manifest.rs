//! Run manifest: effective config, seeds, source revision and output hashes.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;
use sha2::{Digest, Sha256};

use ulmp_core::pipeline::{write_file, PipelineError, RunConfig};

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub git_describe: String,
    pub seed: u64,
    pub history_seed: Option<u64>,
    pub config: RunConfig,
    pub files: Vec<FileHash>,
    #[serde(skip)]
    paths: Vec<PathBuf>,
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git_describe: git_describe(),
            seed: cfg.seed,
            history_seed: cfg.history.is_none().then_some(cfg.synth.seed),
            config: cfg.clone(),
            files: Vec::new(),
            paths: Vec::new(),
        }
    }

    pub fn add(&mut self, path: PathBuf) {
        self.paths.push(path);
    }

    /// Hash every recorded file and write `manifest.json` next to them.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf, PipelineError> {
        self.paths.sort();
        self.paths.dedup();
        for p in &self.paths {
            let sha256 = sha256_file(p).map_err(|source| PipelineError::Io { path: p.display().to_string(), source })?;
            let file = p.strip_prefix(dir).unwrap_or(p).display().to_string();
            self.files.push(FileHash { file, sha256 });
        }
        let text = serde_json::to_string_pretty(&self).expect("manifest serialises");
        write_file(dir, "manifest.json", &text)
    }
}
