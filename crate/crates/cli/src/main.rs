//! `hmlab <command> [--config <path>] [--only <suite>] [--seed <n>] [--out <dir>]`
//!
//! Exit status: 0 when every executed check passes, 1 when a check fails,
//! 2 on usage, configuration or runtime errors.

mod commands;
mod config;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use config::{CommandName, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "hmlab", version, about = "Heisenberg magnet integrability lab")]
struct Cli {
    #[arg(value_enum)]
    command: CommandName,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated suites for `verify` (`all` and `identities` expand).
    #[arg(long)]
    only: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `HMLAB_THREADS` caps the global worker pool.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("HMLAB_THREADS") else { return Ok(()) };
    let n: usize = match v.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => bail!("HMLAB_THREADS must be a positive integer, got `{v}`"),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = cfg.command {
        if c != cli.command {
            bail!("config is for `{c:?}`, not `{:?}`", cli.command);
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if cli.only.is_some() && cli.command != CommandName::Verify {
        bail!("--only applies to verify");
    }
    let out = cfg.out_dir.clone();
    match cli.command {
        CommandName::Verify => commands::verify(&cfg, cli.only.as_deref(), &out),
        CommandName::Simulate => commands::simulate(&cfg, &out),
        CommandName::Charges => commands::charges_table(&cfg, &out),
        CommandName::Scan => commands::scan_table(&cfg, &out),
        CommandName::Report => report::report(&out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
