//! Output files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short deterministic id for a (command, config, seed, args) combination.
pub fn run_id(parts: &[&str]) -> String {
    sha256_hex(parts.join("\u{1f}").as_bytes())[..16].to_string()
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub timestamp_unix: u64,
    pub outputs: Vec<OutputFile>,
    pub version: &'static str,
}

/// Collects files written under one output directory, then records them in
/// `manifest.json`.
pub struct OutDir {
    root: PathBuf,
    written: Vec<OutputFile>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(CliError::internal)?;
        }
        let bytes = w.into_inner().map_err(CliError::internal)?;
        self.write(name, &bytes)
    }

    pub fn finish(self, run_id: String, config_hash: Option<String>, seed: Option<u64>) -> Result<(), CliError> {
        let manifest = RunManifest {
            run_id,
            command: std::env::args().collect::<Vec<_>>().join(" "),
            config_hash,
            seed,
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            outputs: self.written,
            version: env!("CARGO_PKG_VERSION"),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(CliError::internal)?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

pub fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(CliError::internal)?);
    Ok(())
}
