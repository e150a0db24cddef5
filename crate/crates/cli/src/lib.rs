//! Command-line experiments on top of the `overem` library.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::{CommonArgs, ExperimentConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "overem", version, about = "EM on an overspecified simplex Gaussian mixture")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectrum of A A^T, DFT moduli and the kappa bound.
    Spectrum(CommonArgs),
    /// Population EM traces for one or more weight sets.
    PopulationRun(CommonArgs),
    /// Final KL of sample EM across sample sizes and seeds.
    SampleRun(CommonArgs),
    /// Sample k-means and the population Lloyd fixed point.
    Lloyd(CommonArgs),
    /// All diagnostics with a pass/fail summary.
    Verify(CommonArgs),
    /// Uniform deviation of the sample EM operator.
    Perturbation(CommonArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &CommonArgs) {
        match self {
            Command::Spectrum(a) => ("spectrum", a),
            Command::PopulationRun(a) => ("population-run", a),
            Command::SampleRun(a) => ("sample-run", a),
            Command::Lloyd(a) => ("lloyd", a),
            Command::Verify(a) => ("verify", a),
            Command::Perturbation(a) => ("perturbation", a),
        }
    }
}

/// Caps the global worker pool from OVEREM_THREADS, once per process.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("OVEREM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("OVEREM_THREADS must be a positive integer, got {raw:?}")))?;
    // a pool built earlier in this process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(command: &Command) -> Result<Outcome> {
    configure_threads()?;
    let (name, args) = command.parts();
    let cfg = ExperimentConfig::from_args(name, args)?;
    match command {
        Command::Spectrum(_) => commands::spectrum(&cfg),
        Command::PopulationRun(_) => commands::population_run(&cfg),
        Command::SampleRun(_) => commands::sample_run(&cfg),
        Command::Lloyd(_) => commands::lloyd(&cfg),
        Command::Verify(_) => commands::verify(&cfg),
        Command::Perturbation(_) => commands::perturbation(&cfg),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if outcome.failed.is_empty() {
                0
            } else {
                eprintln!("failing checks: {}", outcome.failed.join(", "));
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
