//! Run manifests written beside every output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<InputDigest, CliError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = r.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        path: path.to_path_buf(),
        bytes,
        sha256: hex(&hasher.finalize()),
    })
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
    pub started_unix: u64,
    pub timings_secs: BTreeMap<String, f64>,
}

/// Collects what a run used and how long its phases took.
pub struct Recorder {
    manifest: RunManifest,
    clock: Instant,
}

impl Recorder {
    pub fn new(command: &str, seed: Option<u64>, config: &impl Serialize) -> Self {
        let config = serde_json::to_value(config).expect("configs serialize");
        let config_sha256 = hex(&Sha256::digest(config.to_string().as_bytes()));
        Recorder {
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION"),
                seed,
                config,
                config_sha256,
                inputs: Vec::new(),
                started_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
                timings_secs: BTreeMap::new(),
            },
            clock: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.inputs.push(digest_file(path)?);
        Ok(())
    }

    /// Record the time since the previous mark under `phase`.
    pub fn mark(&mut self, phase: &str) {
        self.manifest
            .timings_secs
            .insert(phase.to_string(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// `report.json` -> `report.json.manifest.json`.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}
