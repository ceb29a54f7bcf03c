use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use mfgeo_cli::{load_config, parse_config, run, CommandKind};

/// Mean field games and coarse curvature on model manifolds.
#[derive(Debug, Parser)]
#[command(name = "mfgeo", version)]
struct Cli {
    #[arg(value_enum)]
    command: CommandKind,
    /// JSON run configuration (optional for self-check).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; seed lists become `seed, seed + 1, ...`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "MFGEO_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: &Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let loaded = match &cli.config {
        Some(path) => load_config(path, cli.command),
        None if cli.command == CommandKind::SelfCheck => parse_config("{}", cli.command, ".".as_ref()),
        None => anyhow::bail!("--config is required for {}", cli.command.name()),
    };
    let mut config = match loaded {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            return Ok(ExitCode::from(2));
        }
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    let out = cli.out.clone().unwrap_or_else(|| config.output.clone());
    let outcome = run(&config, &out)?;
    for line in &outcome.lines {
        println!("{line}");
    }
    println!("status: {} (manifest {})", outcome.manifest.status, out.join("manifest.json").display());
    if outcome.success() {
        return Ok(ExitCode::SUCCESS);
    }
    for v in outcome.violations() {
        eprintln!("violated: {} ({})", v.name, v.detail);
    }
    Ok(ExitCode::from(1))
}
