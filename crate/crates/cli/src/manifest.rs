//! Per-output-directory run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Context};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
    /// Whether a replay must reproduce the file byte for byte.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Relative paths in `argv` resolve against this directory.
    pub working_dir: PathBuf,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<OutputDigest>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&std::fs::read(path).at(path)?))
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Collects inputs and outputs of one command run.
pub struct Recorder {
    pub out_dir: PathBuf,
    command: String,
    argv: Vec<String>,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<OutputDigest>,
    started: f64,
}

impl Recorder {
    /// Creates `out_dir` if needed.
    pub fn new(command: &str, argv: &[String], out_dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(out_dir).at(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            command: command.into(),
            argv: argv.to_vec(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        })
    }

    pub fn config(&mut self, config: &impl Serialize, seed: Option<u64>) -> CliResult<()> {
        self.config = serde_json::to_value(config)?;
        self.seed = seed;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = file_sha256(path)?;
        self.inputs.push(FileDigest { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Records a file already written to the output directory.
    pub fn output(&mut self, name: &str, deterministic: bool) -> CliResult<()> {
        let sha256 = file_sha256(&self.path(name))?;
        self.outputs.push(OutputDigest { path: name.into(), sha256, deterministic });
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8], deterministic: bool) -> CliResult<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).at(&p)?;
        self.output(name, deterministic)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize, deterministic: bool) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes, deterministic)
    }

    pub fn finish(self) -> CliResult<RunManifest> {
        let m = RunManifest {
            command: self.command,
            argv: self.argv,
            working_dir: std::env::current_dir()?,
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let p = self.out_dir.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        std::fs::write(&p, bytes).at(&p)?;
        Ok(m)
    }
}

pub fn load(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
