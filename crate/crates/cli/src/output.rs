use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use vgs_core::data::manifest::to_canonical_json;

pub const OUT_DIR_ENV: &str = "VGS_OUT_DIR";

/// A failed command and its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl fmt::Display) -> Self {
        CliError { code: 1, message: message.to_string() }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError { code: 2, message: format!("{}: {e}", path.display()) }
    }
}

impl From<vgs_core::Error> for CliError {
    fn from(e: vgs_core::Error) -> Self {
        CliError { code: if e.is_io() { 2 } else { 1 }, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// What every report records about the run that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub command: &'static str,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of the effective configuration.
    pub config_hash: String,
    pub version: &'static str,
    pub config: Value,
}

impl RunInfo {
    pub fn new(command: &'static str, seed: u64, config: Value) -> CliResult<Self> {
        let canonical = to_canonical_json(&config)?;
        let config_hash = Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(RunInfo { command, seed, config_hash, version: vgs_core::VERSION, config })
    }
}

pub fn to_value<T: Serialize>(value: &T) -> CliResult<Value> {
    serde_json::to_value(value).map_err(CliError::config)
}

pub fn out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("vgs-out"))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// `{"run": .., "result": ..}` as canonical JSON.
pub fn report_json<T: Serialize>(run: &RunInfo, result: &T) -> CliResult<String> {
    Ok(to_canonical_json(&json!({ "run": run, "result": to_value(result)? }))?)
}

pub fn write_report<T: Serialize>(dir: &Path, name: &str, run: &RunInfo, result: &T) -> CliResult<PathBuf> {
    write_text(dir, name, &report_json(run, result)?)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
