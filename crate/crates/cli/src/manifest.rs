//! Per-command run manifests and the skip-if-unchanged check.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ecg_delineation::dataset::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub config: String,
    /// Command-specific arguments that change the outputs.
    pub args: BTreeMap<String, String>,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, threads: usize) -> Self {
        let config = cfg.to_text();
        let mut seeds = BTreeMap::new();
        seeds.insert("split".into(), cfg.split_seed);
        seeds.insert("train".into(), cfg.train.seed);
        seeds.insert("search".into(), cfg.search.seed);
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            args: BTreeMap::new(),
            inputs: BTreeMap::new(),
            seeds,
            threads,
            outputs: Vec::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) {
        self.args.insert(key.into(), value.to_string());
    }

    pub fn input_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Hashes whichever of `files` exist.
    pub fn input_files_if_present(&mut self, files: impl IntoIterator<Item = PathBuf>) -> Result<()> {
        for f in files {
            if f.exists() {
                self.input_file(&f)?;
            }
        }
        Ok(())
    }

    pub fn path(out: &Path, command: &str) -> PathBuf {
        out.join(format!("{command}.manifest.json"))
    }

    /// True when `out` already holds the outputs of an identical run.
    pub fn up_to_date(&self, out: &Path) -> bool {
        let Ok(text) = std::fs::read_to_string(Self::path(out, &self.command)) else {
            return false;
        };
        let Ok(old) = serde_json::from_str::<RunManifest>(&text) else {
            return false;
        };
        let same = RunManifest {
            outputs: self.outputs.clone(),
            ..old.clone()
        } == *self;
        same && !old.outputs.is_empty() && old.outputs.iter().all(|o| out.join(o).exists())
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let p = Self::path(out, &self.command);
        std::fs::write(&p, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", p.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unchanged_run_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let mut m = RunManifest::new("split", &cfg, 1);
        m.arg("cache", "c");
        assert!(!m.up_to_date(dir.path()));
        std::fs::write(dir.path().join("split.json"), "{}").unwrap();
        let mut done = m.clone();
        done.outputs.push("split.json".into());
        done.write(dir.path()).unwrap();
        assert!(m.up_to_date(dir.path()));
        let mut changed = m.clone();
        changed.arg("cache", "d");
        assert!(!changed.up_to_date(dir.path()));
        std::fs::remove_file(dir.path().join("split.json")).unwrap();
        assert!(!m.up_to_date(dir.path()));
    }
}
