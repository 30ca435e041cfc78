//! Output-directory plumbing: the resolved config echo, provenance records
//! and hashing.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const GIT_DESCRIBE: &str = env!("SMDS_GIT_DESCRIBE");
pub const CONFIG_ECHO: &str = "config.resolved.toml";

/// Embedded in every JSON artifact.
#[derive(Debug, Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub git_describe: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a RunConfig,
}

impl<'a> Provenance<'a> {
    pub fn new(command: &'a str, config: &'a RunConfig) -> Self {
        Self {
            tool: "smds",
            version: env!("CARGO_PKG_VERSION"),
            git_describe: GIT_DESCRIBE,
            command,
            seed: config.seed,
            config,
        }
    }
}

/// Creates the run directory and echoes the resolved config into it.
pub fn prepare_run_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.run_dir();
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let text = format!(
        "# resolved by smds {} ({GIT_DESCRIBE}), seed {}\n{}",
        env!("CARGO_PKG_VERSION"),
        config.seed,
        config.to_toml()
    );
    write_file(&dir.join(CONFIG_ECHO), text.as_bytes())?;
    Ok(dir)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = fs::File::open(path).map_err(CliError::io(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(CliError::io(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}
