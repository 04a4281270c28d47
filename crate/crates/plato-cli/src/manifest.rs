//! Provenance record written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use plato::checksum;
use plato::model::FileRef;
use plato::nn::NumericMode;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Fully resolved configuration of the command, defaults included.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub numeric_mode: NumericMode,
    /// Paths as given on the command line.
    pub inputs: Vec<FileRef>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileRef>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn file_ref(path: &Path, shown: PathBuf) -> Result<FileRef> {
    let sha256 = checksum::sha256_file(path).with_context(|| format!("checksumming {}", path.display()))?;
    Ok(FileRef { path: shown, sha256 })
}

pub fn hash_config(config: &serde_json::Value) -> String {
    checksum::sha256_hex(&serde_json::to_vec(config).expect("config serializes"))[..16].to_owned()
}

/// Collects inputs and outputs while a command runs, then writes the
/// manifest into the output directory.
pub struct Recorder {
    command: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    numeric_mode: NumericMode,
    inputs: Vec<FileRef>,
    outputs: Vec<PathBuf>,
    started: u64,
}

impl Recorder {
    pub fn new(command: &str, config: impl Serialize, numeric_mode: NumericMode) -> Self {
        Recorder {
            command: command.to_owned(),
            config: serde_json::to_value(config).expect("config serializes"),
            seeds: BTreeMap::new(),
            numeric_mode,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_owned(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let r = file_ref(path, path.to_owned())?;
        if !self.inputs.contains(&r) {
            self.inputs.push(r);
        }
        Ok(())
    }

    /// `path` is relative to the output directory.
    pub fn output(&mut self, path: impl Into<PathBuf>) {
        let p = path.into();
        if !self.outputs.contains(&p) {
            self.outputs.push(p);
        }
    }

    pub fn finish(self, out_dir: &Path) -> Result<RunManifest> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| file_ref(&out_dir.join(p), p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_hash: hash_config(&self.config),
            config: self.config,
            seeds: self.seeds,
            numeric_mode: self.numeric_mode,
            inputs: self.inputs,
            outputs,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let path = out_dir.join(FILE_NAME);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Re-reads every output under `out_dir` and compares checksums.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for r in &self.outputs {
            let p = out_dir.join(&r.path);
            let sum = checksum::sha256_file(&p).with_context(|| format!("reading {}", p.display()))?;
            if sum != r.sha256 {
                bail!("checksum mismatch for {}", p.display());
            }
        }
        Ok(())
    }
}
