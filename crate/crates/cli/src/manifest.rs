//! Run manifests: what was run, on which inputs, producing which files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::settings::Layer;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    /// Outputs were written but the solver stopped on a budget rather than converging.
    Partial,
    Failed,
}

#[derive(Debug, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub config: Layer,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub timings: Timings,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Collects inputs and outputs of one command and writes the manifest.
pub struct Recorder {
    subcommand: String,
    command: Vec<String>,
    seed: u64,
    config: Layer,
    out_dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    start: Instant,
}

impl Recorder {
    pub fn new(subcommand: &str, command: &[String], seed: u64, config: Layer, out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir.display(), e))?;
        Ok(Recorder {
            subcommand: subcommand.to_string(),
            command: command.to_vec(),
            seed,
            config,
            out_dir: out_dir.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        })
    }

    /// Hashes `path` into the manifest.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| CliError::io(path.display(), e))?;
        self.outputs.push(path.display().to_string());
        Ok(path)
    }

    pub fn finish(self, status: RunStatus, error: Option<String>) -> CliResult<()> {
        let manifest = RunManifest {
            command: self.command,
            subcommand: self.subcommand,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            status,
            error,
            timings: Timings {
                total_seconds: self.start.elapsed().as_secs_f64(),
            },
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        fs::write(&path, to_json(&manifest)).map_err(|e| CliError::io(path.display(), e))
    }

    /// Runs `body`, then writes the manifest with the outcome. A failure is
    /// recorded in the manifest and returned.
    pub fn run<F>(mut self, body: F) -> CliResult<String>
    where
        F: FnOnce(&mut Recorder) -> CliResult<(RunStatus, String)>,
    {
        match body(&mut self) {
            Ok((status, summary)) => {
                self.finish(status, None)?;
                Ok(summary)
            }
            Err(e) => {
                let msg = e.to_string();
                if let Err(write_err) = self.finish(RunStatus::Failed, Some(msg)) {
                    log::error!("could not write manifest: {write_err}");
                }
                Err(e)
            }
        }
    }
}
