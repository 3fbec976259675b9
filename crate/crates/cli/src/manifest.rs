//! Run manifests: a JSON record written beside every output file.

use std::fs;
use std::path::{Path, PathBuf};

use pdm_kws::datasets::Dataset;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub workers: Option<usize>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, ctx: &crate::commands::Context) -> Self {
        Self {
            command: command.into(),
            argv: ctx.argv.clone(),
            version: env!("CARGO_PKG_VERSION"),
            workers: ctx.workers,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    pub fn input_file(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path)?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn input_dataset(&mut self, path: &Path, ds: &Dataset) {
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: dataset_digest(ds),
        });
    }

    /// Writes `<output>.manifest.json` and returns its path.
    pub fn write_beside(&mut self, output: &Path) -> Result<PathBuf, CliError> {
        self.outputs.push(output.display().to_string());
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

/// Digest over every clip's split, source, label and 16-bit samples.
pub fn dataset_digest(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for name in &ds.class_names {
        h.update(name.as_bytes());
        h.update([0]);
    }
    for (tag, split) in [(b'T', &ds.train), (b'V', &ds.valid), (b'E', &ds.test)] {
        for u in split.iter() {
            h.update([tag]);
            h.update(u.source.as_bytes());
            h.update((u.label as u32).to_le_bytes());
            for &s in &u.signal.samples {
                h.update(pdm_kws::signal_io::quantize_i16(s).to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}
