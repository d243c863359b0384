//! Run manifest written next to every command's artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    /// Hex SHA-256 of the file bytes; absent when unreadable.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputFile>,
    /// Hash of the effective configuration, see [`config_hash`].
    pub config_hash: String,
    pub tool_version: String,
    /// Seconds per phase.
    pub wall_times: BTreeMap<String, f64>,
    pub exit_status: i32,
    pub message: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            inputs: Vec::new(),
            config_hash: config_hash(&serde_json::Value::Null),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_times: BTreeMap::new(),
            exit_status: 0,
            message: String::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) {
        let sha256 = fs::read(path).ok().map(|b| hex::encode(Sha256::digest(&b)));
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256,
        });
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join("manifest.json"), text + "\n")
    }
}

/// SHA-256 of the compact JSON form of `config`.
///
/// `serde_json` objects keep their keys sorted and floats print in their
/// shortest round-trip form, so the bytes, and the hash, do not depend
/// on the platform.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}
