//! Command-line driver: configuration, experiment dispatch and artifacts.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod selfcheck;
pub mod svg;

use std::path::Path;

use anyhow::Result;

pub use config::{load_config, parse_config, CommandKind, ConfigError, RunConfig};
pub use manifest::{Invariant, Manifest};

use manifest::Recorder;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    /// Human-readable summary lines.
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn violations(&self) -> Vec<&Invariant> {
        self.manifest.invariants.iter().filter(|i| !i.held).collect()
    }

    pub fn success(&self) -> bool {
        self.manifest.status == "ok"
    }
}

fn seeds(config: &RunConfig) -> Vec<u64> {
    match &config.experiment {
        config::Experiment::Converge(c) => c.seeds.clone(),
        config::Experiment::Sde(s) => s.seeds.clone(),
        _ => vec![config.seed],
    }
}

/// Runs `config`, writing all artifacts and `manifest.json` into `out`.
pub fn run(config: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut rec = Recorder::new(out)?;
    match config.command {
        CommandKind::MfgSolve => commands::mfg_solve(config, &mut rec)?,
        CommandKind::CurvatureMfg => commands::curvature_mfg(config, &mut rec)?,
        CommandKind::GraphCurvature => commands::graph_curvature(config, &mut rec)?,
        CommandKind::GraphConverge => commands::graph_converge(config, &mut rec)?,
        CommandKind::SdeValidate => commands::sde_validate(config, &mut rec)?,
        CommandKind::SelfCheck => {
            let results = selfcheck::run_checks();
            for r in &results {
                rec.check(r.name, r.passed, r.detail.clone());
                let tag = if r.passed { "PASS" } else { "FAIL" };
                rec.say(format!("{tag} {}: {}", r.name, r.detail));
            }
            let passed = results.iter().filter(|r| r.passed).count();
            rec.say(format!("{passed}/{} checks passed", results.len()));
            rec.write_csv("selfcheck.csv", &results)?;
        }
    }
    let (manifest, lines) = rec.finish(config, seeds(config))?;
    Ok(Outcome { manifest, lines })
}
