//! Per-run manifest: one `key = value` text file next to the outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub struct RunManifest {
    command: &'static str,
    started: Instant,
    seed: Option<u64>,
    config: Vec<(String, String)>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            seed: None,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Records every `key = value` line of a resolved config text.
    pub fn config(&mut self, section: &str, text: &str) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.config
                    .push((format!("{section}.{}", k.trim()), v.trim().to_string()));
            }
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest to `path` with checksums of every output file.
    pub fn finish(self, path: &Path) -> Result<(), CliError> {
        let mut s = String::new();
        s.push_str(&format!("command = {}\n", self.command));
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        for (k, v) in &self.config {
            s.push_str(&format!("config.{k} = {v}\n"));
        }
        for p in &self.inputs {
            s.push_str(&format!("input = {}\n", p.display()));
        }
        for p in &self.outputs {
            s.push_str(&format!("output = {}\n", p.display()));
        }
        s.push_str(&format!(
            "duration_seconds = {:.3}\n",
            self.started.elapsed().as_secs_f64()
        ));
        for p in &self.outputs {
            let bytes = std::fs::read(p)?;
            s.push_str(&format!(
                "sha256.{} = {}\n",
                p.display(),
                hex::encode(Sha256::digest(&bytes))
            ));
        }
        cortexdec_core::data::write_atomic(path, s.as_bytes())?;
        Ok(())
    }
}

/// `<output>.manifest` for single-file commands.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    output.with_file_name(name)
}
