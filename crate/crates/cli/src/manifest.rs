//! Run manifests: what was run, on what, and what it produced.

use std::path::{Path, PathBuf};
use std::time::Instant;

use flowcast::{write_atomic, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Written last, atomically, next to a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub config: Option<RunConfig>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<Timing>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects a manifest while a command runs.
pub struct Recorder {
    manifest: RunManifest,
    stage_start: Instant,
    run_start: Instant,
}

impl Recorder {
    pub fn new(command: &str, seed: u64) -> Self {
        let now = Instant::now();
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().collect(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: None,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings: Vec::new(),
            },
            stage_start: now,
            run_start: now,
        }
    }

    pub fn config(&mut self, cfg: &RunConfig) {
        self.manifest.config = Some(cfg.clone());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let d = digest_file(path)?;
        self.manifest.inputs.push(d);
        Ok(())
    }

    /// Writes `bytes` atomically to `path` and records its digest.
    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.manifest.outputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Closes the current stage under `name`.
    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.manifest.timings.push(Timing {
            stage: name.to_string(),
            seconds: (now - self.stage_start).as_secs_f64(),
        });
        self.stage_start = now;
    }

    pub fn finish(mut self, path: &Path) -> Result<RunManifest> {
        self.manifest.timings.push(Timing {
            stage: "total".into(),
            seconds: self.run_start.elapsed().as_secs_f64(),
        });
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(path, json.as_bytes())?;
        Ok(self.manifest)
    }
}
