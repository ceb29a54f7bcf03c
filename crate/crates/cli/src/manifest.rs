//! Run artifacts: manifest, CSV tables and figures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Invariant {
    pub name: String,
    pub held: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// `ok`, `not converged` or `invariant violated`.
    pub status: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub observations: BTreeMap<String, Value>,
    pub invariants: Vec<Invariant>,
    pub artifacts: Vec<String>,
}

/// Collects observations, invariant checks and files of one run.
#[derive(Debug)]
pub struct Recorder {
    dir: PathBuf,
    observations: BTreeMap<String, Value>,
    invariants: Vec<Invariant>,
    artifacts: Vec<String>,
    lines: Vec<String>,
    not_converged: bool,
}

impl Recorder {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            observations: BTreeMap::new(),
            invariants: Vec::new(),
            artifacts: Vec::new(),
            lines: Vec::new(),
            not_converged: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn observe<T: Serialize>(&mut self, key: &str, value: T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.observations.insert(key.to_string(), v);
    }

    pub fn check(&mut self, name: &str, held: bool, detail: impl Into<String>) {
        self.invariants.push(Invariant {
            name: name.to_string(),
            held,
            detail: detail.into(),
        });
    }

    pub fn mark_not_converged(&mut self) {
        self.not_converged = true;
    }

    /// Line for standard output.
    pub fn say(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Registers a file written directly into the output directory.
    pub fn write_text_registered(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    pub fn violations(&self) -> Vec<&Invariant> {
        self.invariants.iter().filter(|i| !i.held).collect()
    }

    /// Writes `manifest.json` and returns it.
    pub fn finish(mut self, config: &RunConfig, seeds: Vec<u64>) -> Result<(Manifest, Vec<String>)> {
        let status = if self.not_converged {
            "not converged"
        } else if self.invariants.iter().any(|i| !i.held) {
            "invariant violated"
        } else {
            "ok"
        };
        self.artifacts.push("manifest.json".into());
        let manifest = Manifest {
            tool: "mfgeo",
            version: env!("CARGO_PKG_VERSION"),
            command: config.command.name(),
            status: status.to_string(),
            config: serde_json::to_value(config)?,
            seeds,
            threads: rayon::current_num_threads(),
            observations: self.observations,
            invariants: self.invariants,
            artifacts: self.artifacts,
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok((manifest, self.lines))
    }
}
