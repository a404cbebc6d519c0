//! Per-run manifest: the resolved configuration's hash, the seeds in play,
//! and a digest of every input file. No timestamps or host details — two
//! runs with the same inputs and settings produce byte-identical manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::config::Settings;

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub struct Manifest {
    command: &'static str,
    config_sha256: String,
    seed: u64,
    /// Extra `key = value` lines, e.g. the seed grid of an ablation.
    extra: Vec<(String, String)>,
    inputs: Vec<(PathBuf, String)>,
}

impl Manifest {
    pub fn new(command: &'static str, settings: &Settings) -> Result<Manifest> {
        let config_text = settings.experiment_lines().join("\n") + "\n";
        Ok(Manifest {
            command,
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed: settings.seed()?,
            extra: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.extra.push((key.to_string(), value.to_string()));
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot digest input `{}`", path.display()))?;
        self.inputs.push((path.to_path_buf(), sha256_hex(&bytes)));
        Ok(())
    }

    /// Writes `manifest.txt` into the output directory.
    pub fn write(mut self, out_dir: &Path) -> Result<()> {
        let mut text = String::new();
        writeln!(text, "command = {}", self.command).unwrap();
        writeln!(text, "config_sha256 = {}", self.config_sha256).unwrap();
        writeln!(text, "seed = {}", self.seed).unwrap();
        for (key, value) in &self.extra {
            writeln!(text, "{key} = {value}").unwrap();
        }
        self.inputs.sort();
        for (path, digest) in &self.inputs {
            writeln!(text, "input {} = sha256:{digest}", path.display()).unwrap();
        }
        let path = out_dir.join("manifest.txt");
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write manifest `{}`", path.display()))
    }
}
