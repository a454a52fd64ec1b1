//! Per-run `key=value` manifests with SHA-256 hashes of inputs and outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(arrayssl::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<(PathBuf, String)>,
    pub results: Vec<(String, String)>,
    pub duration: Duration,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn result(&mut self, key: &str, value: impl ToString) {
        self.results.push((key.to_string(), value.to_string()));
    }

    pub fn get_result(&self, key: &str) -> Option<&str> {
        self.results.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let h = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), h));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let h = sha256_file(path)?;
        self.outputs.push((path.to_path_buf(), h));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k}={v}").expect("String write");
        line("command", &self.command);
        if let Some(seed) = self.seed {
            line("seed", &seed);
        }
        for (k, v) in &self.config {
            line(&format!("config.{k}"), v);
        }
        for (i, (p, h)) in self.inputs.iter().enumerate() {
            line(&format!("input.{i}"), &p.display());
            line(&format!("input.{i}.sha256"), h);
        }
        for (i, (p, h)) in self.outputs.iter().enumerate() {
            line(&format!("output.{i}"), &p.display());
            line(&format!("output.{i}.sha256"), h);
        }
        for (k, v) in &self.results {
            line(&format!("result.{k}"), v);
        }
        line("wall_clock_secs", &format!("{:.3}", self.duration.as_secs_f64()));
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.render()).map_err(|e| io_error(path, e))
    }
}
