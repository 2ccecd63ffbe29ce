use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lhfi::dataset::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError, CliResult};

pub const RUN_MANIFEST_FILE: &str = "run.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    /// Stopped early with checkpoints on disk.
    Interrupted,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record for one command invocation, written to
/// `<out>/run.json` when the command starts and rewritten when it ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub engine_version: String,
    /// The command's resolved options.
    pub options: serde_json::Value,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub dataset_hash: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub status: RunStatus,
    pub error: Option<String>,
    #[serde(skip)]
    path: PathBuf,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunManifest {
    /// Create `out_dir` and an unwritten manifest for `command`.
    pub fn new<T: Serialize>(command: &str, options: &T, out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
        Ok(Self {
            command: command.into(),
            engine_version: env!("CARGO_PKG_VERSION").into(),
            options: serde_json::to_value(options).map_err(|e| CliError::Runtime(e.into()))?,
            seed: None,
            config_hash: None,
            dataset_hash: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            status: RunStatus::Running,
            error: None,
            path: out_dir.join(RUN_MANIFEST_FILE),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        self.inputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Atomic write (temporary file, then rename).
    pub fn write(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.into()))?;
        let tmp = self.path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| io_error(&tmp, e))?;
        fs::rename(&tmp, &self.path).map_err(|e| io_error(&self.path, e))
    }

    pub fn finish(&mut self, status: RunStatus, error: Option<String>) -> CliResult<()> {
        self.status = status;
        self.error = error;
        self.finished_unix_ms = Some(now_ms());
        self.write()
    }

    /// Finalize from a command result: success, or failure with its message.
    pub fn conclude<T>(&mut self, result: &CliResult<T>) -> CliResult<()> {
        match result {
            Ok(_) => self.finish(RunStatus::Succeeded, None),
            Err(e) => self.finish(RunStatus::Failed, Some(e.to_string())),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| CliError::Runtime(e.into()))?;
        m.path = path.to_path_buf();
        Ok(m)
    }
}
