//! Output directory bookkeeping: artifacts are written through a
//! [`RunRecord`], which hashes them into `<command>.manifest` next to a
//! `<command>.log` that echoes the resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct RunRecord {
    command: &'static str,
    out_dir: PathBuf,
    config_lines: Vec<String>,
    inputs: Vec<(String, String)>,
    artifacts: Vec<(String, String)>,
    log: Vec<String>,
    quiet: bool,
}

impl RunRecord {
    /// Creates the output directory and starts the log with the resolved
    /// configuration.
    pub fn start(command: &'static str, cfg: &RunConfig, quiet: bool) -> Result<Self, CliError> {
        let out_dir = PathBuf::from(&cfg.out_dir);
        fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
        let config_lines = cfg.echo();
        let mut rec = Self {
            command,
            out_dir,
            config_lines: config_lines.clone(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            log: Vec::new(),
            quiet: true,
        };
        rec.log(format!("command {command}"));
        for line in config_lines {
            rec.log(format!("config {line}"));
        }
        rec.quiet = quiet;
        Ok(rec)
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Appends to the run log and, unless quiet, prints to stdout.
    pub fn log(&mut self, line: impl Into<String>) {
        let line = line.into();
        if !self.quiet {
            println!("{line}");
        }
        self.log.push(line);
    }

    /// Reads an input file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push((path.display().to_string(), sha256_hex(&bytes)));
        Ok(bytes)
    }

    /// Writes `bytes` to `<out_dir>/<name>` and records its hash.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    /// Writes the log and the manifest; the manifest lists the resolved
    /// configuration, input hashes and artifact hashes in write order.
    pub fn finish(self) -> Result<(), CliError> {
        let mut manifest = vec![format!("command {}", self.command)];
        manifest.extend(self.config_lines.iter().map(|l| format!("config {l}")));
        manifest.extend(self.inputs.iter().map(|(p, h)| format!("input {h} {p}")));
        manifest.extend(self.artifacts.iter().map(|(p, h)| format!("artifact {h} {p}")));
        let write = |name: String, lines: &[String]| {
            let path = self.out_dir.join(name);
            fs::write(&path, lines.join("\n") + "\n").map_err(|e| CliError::io(&path, e))
        };
        write(format!("{}.log", self.command), &self.log)?;
        write(format!("{}.manifest", self.command), &manifest)
    }
}
