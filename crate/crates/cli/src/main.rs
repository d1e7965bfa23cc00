//! `kmt`: threshold tables, streaming thresholds, change-point detection,
//! hitting-time bounds and validation runs, emitted as CSV or JSON.

mod changepoint;
mod hitting;
mod output;
mod params;
mod thresholds;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use changepoint::ChangepointCmd;
use hitting::HittingCmd;
use output::{Ctx, RunManifest};
use params::{usage, Resolver, UsageError};
use validate::ValidateCmd;

#[derive(Debug, Parser)]
#[command(name = "kmt", version, about = "Computable strong-approximation thresholds and their applications")]
struct Cli {
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "KMT_THREADS")]
    threads: Option<usize>,
    /// JSON object of parameters keyed by flag name; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Emit JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write a run manifest here.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Deterministic threshold table for known R and sigma.
    Thresholds(thresholds::ThresholdsArgs),
    /// Data-driven thresholds over a stream of observations.
    Empirical(thresholds::EmpiricalArgs),
    #[command(subcommand)]
    Changepoint(ChangepointCmd),
    #[command(subcommand)]
    Hitting(HittingCmd),
    #[command(subcommand)]
    Validate(ValidateCmd),
    /// Re-runs the command recorded in a manifest with its parameters.
    Replay {
        /// Manifest written by an earlier `--manifest` run.
        path: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Thresholds(_) => "thresholds",
            Command::Empirical(_) => "empirical",
            Command::Changepoint(ChangepointCmd::Run(_)) => "changepoint run",
            Command::Changepoint(ChangepointCmd::Simulate(_)) => "changepoint simulate",
            Command::Hitting(HittingCmd::Bound(_)) => "hitting bound",
            Command::Hitting(HittingCmd::MinN(_)) => "hitting min-n",
            Command::Validate(ValidateCmd::Wasserstein(_)) => "validate wasserstein",
            Command::Validate(ValidateCmd::Coverage(_)) => "validate coverage",
            Command::Replay { .. } => "replay",
        }
    }
}

fn execute(ctx: &mut Ctx, command: Command) -> Result<()> {
    match command {
        Command::Thresholds(args) => thresholds::thresholds(ctx, args),
        Command::Empirical(args) => thresholds::empirical(ctx, args),
        Command::Changepoint(ChangepointCmd::Run(args)) => changepoint::run(ctx, args),
        Command::Changepoint(ChangepointCmd::Simulate(args)) => changepoint::simulate(ctx, args),
        Command::Hitting(HittingCmd::Bound(args)) => hitting::bound(ctx, args),
        Command::Hitting(HittingCmd::MinN(args)) => hitting::min_n(ctx, args),
        Command::Validate(ValidateCmd::Wasserstein(args)) => validate::wasserstein(ctx, args),
        Command::Validate(ValidateCmd::Coverage(args)) => validate::coverage(ctx, args),
        Command::Replay { .. } => usage("a manifest cannot replay another replay"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring the thread pool")?;
    }
    let (command, resolver, out) = match cli.command {
        Command::Replay { path } => {
            let recorded = RunManifest::load(&path)?;
            let argv = std::iter::once("kmt").chain(recorded.command.split_whitespace());
            let command = match Cli::try_parse_from(argv) {
                Ok(parsed) => parsed.command,
                Err(e) => return usage(format!("manifest command `{}`: {e}", recorded.command)),
            };
            let out = cli.out.or_else(|| recorded.artifacts.first().cloned());
            (command, Resolver::new(recorded.parameters.into_iter().collect()), out)
        }
        command => {
            let resolver = match &cli.config {
                Some(path) => Resolver::from_file(path)?,
                None => Resolver::default(),
            };
            (command, resolver, cli.out)
        }
    };
    let name = command.name();
    let mut ctx = Ctx::new(resolver, cli.json, out)?;
    execute(&mut ctx, command)?;
    if let Some(path) = cli.manifest {
        ctx.into_manifest(name, started.elapsed().as_secs_f64()).save(&path)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
