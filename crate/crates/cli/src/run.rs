//! Output staging and the run manifest. Artifacts are written into a hidden
//! staging directory inside the output directory and moved into place only
//! after the command has succeeded, manifest last.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::config::Config;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const OUTPUT_ENV: &str = "AFS_OUTPUT_DIR";

#[derive(Debug, Serialize)]
pub struct DatasetFingerprint {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seeds: BTreeMap<String, u64>,
    pub datasets: Vec<DatasetFingerprint>,
    pub artifacts: Vec<PathBuf>,
    pub wall_time_secs: f64,
    /// Command-specific results.
    pub details: BTreeMap<String, Value>,
}

pub struct Run {
    command: String,
    dir: PathBuf,
    staging: TempDir,
    started: Instant,
    artifacts: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub datasets: Vec<DatasetFingerprint>,
    pub details: BTreeMap<String, Value>,
}

/// Output root: `--output-dir`, then `$AFS_OUTPUT_DIR`, then the config's
/// `output_dir`, then `runs`.
pub fn output_root(flag: Option<&Path>, config: &Config) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

impl Run {
    pub fn start(command: &str, root: &Path) -> Result<Run, CliError> {
        let dir = root.join(command);
        fs::create_dir_all(&dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(&dir)
            .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        Ok(Run {
            command: command.to_string(),
            dir,
            staging,
            started: Instant::now(),
            artifacts: Vec::new(),
            seeds: BTreeMap::new(),
            datasets: Vec::new(),
            details: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Staging path for artifact `name`; the file must be written there.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.staging.path().join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.artifact(name);
        fs::write(&path, bytes).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    }

    pub fn fingerprint(&mut self, role: &str, files: &[PathBuf]) -> Result<(), CliError> {
        for path in files {
            let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let digest = Sha256::digest(&bytes);
            self.datasets.push(DatasetFingerprint {
                role: role.to_string(),
                path: path.clone(),
                sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            });
        }
        Ok(())
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) -> Result<(), CliError> {
        let v = serde_json::to_value(value).map_err(CliError::runtime)?;
        self.details.insert(key.to_string(), v);
        Ok(())
    }

    /// Writes the resolved config and manifest, then moves every staged
    /// file into the output directory.
    pub fn finish(mut self, config: &Config) -> Result<PathBuf, CliError> {
        self.write("config.toml", config.to_toml()?)?;
        let manifest = RunManifest {
            command: self.command.clone(),
            config: config.clone(),
            seeds: std::mem::take(&mut self.seeds),
            datasets: std::mem::take(&mut self.datasets),
            artifacts: self
                .artifacts
                .iter()
                .chain([&MANIFEST_FILE.to_string()])
                .map(|a| self.dir.join(a))
                .collect(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            details: std::mem::take(&mut self.details),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)?;
        fs::write(self.staging.path().join(MANIFEST_FILE), json + "\n")
            .map_err(|e| CliError::runtime(format!("writing manifest: {e}")))?;
        for name in self.artifacts.iter().chain([&MANIFEST_FILE.to_string()]) {
            let (from, to) = (self.staging.path().join(name), self.dir.join(name));
            fs::rename(&from, &to).map_err(|e| CliError::runtime(format!("{}: {e}", to.display())))?;
        }
        Ok(self.dir.join(MANIFEST_FILE))
    }
}
