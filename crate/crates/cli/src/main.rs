//! `polysafe`: synthesize, sweep, verify and simulate data-driven contractive-set certificates.

mod commands;
mod config;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use polysafe_core::synthesis::{Mode, Theorem};

use crate::commands::Outcome;
use crate::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "polysafe", version, about = "Data-driven synthesis of contractive polytopic safe sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one certificate at the configured radius.
    Synth(Common),
    /// Largest coefficient magnitude that stays certifiable.
    Sweep(Common),
    /// Largest radius of the scaled safe set that stays certifiable.
    Rmax(Common),
    /// Sample a stored certificate on the true plant.
    Verify(WithResult),
    /// Vertex-initialized closed-loop trajectories of a stored certificate.
    Simulate(WithResult),
    /// Run the benchmark matrix and write summary tables.
    Reproduce(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration; defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel parts.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// One of 1, 2, p1, 3, 4.
    #[arg(long)]
    theorem: Option<Theorem>,
    /// One of unstructured, structured, active_only.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    hw: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long = "verify-n")]
    verify_n: Option<usize>,
    #[arg(long = "boundary-frac")]
    boundary_frac: Option<f64>,
}

#[derive(Args)]
struct WithResult {
    #[command(flatten)]
    common: Common,
    /// Certificate to load; defaults to `<out>/result.json`.
    #[arg(long)]
    result: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            lambda: self.lambda,
            theorem: self.theorem,
            mode: self.mode,
            h_w: self.hw,
            radius: self.radius,
            verify_n: self.verify_n,
            boundary_frac: self.boundary_frac,
            out: self.out.clone(),
        });
        cfg.validate()?;
        if let Some(j) = self.jobs {
            rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Synth(c) => commands::synth(&c.load()?),
        Command::Sweep(c) => commands::sweep(&c.load()?),
        Command::Rmax(c) => commands::rmax(&c.load()?),
        Command::Verify(w) => commands::verify(&w.common.load()?, w.result.as_deref()),
        Command::Simulate(w) => commands::simulate(&w.common.load()?, w.result.as_deref()),
        Command::Reproduce(c) => reproduce::reproduce(&c.load()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(o) => ExitCode::from(o.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
