use anyhow::{bail, Result};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use kmt_core::hitting::{
    hitting_bound, Boundary, CrossingConfig, CrossingEstimate, HittingSweep, HittingTimeProblem, MinNOutcome,
};
use kmt_core::scheduler::SplitSearchConfig;

use crate::output::Ctx;
use crate::thresholds::bound_config;

#[derive(Debug, Subcommand)]
pub enum HittingCmd {
    /// Upper bound on the probability that the walk crosses `g` by time N.
    Bound(BoundArgs),
    /// Smallest power of two N with a bound below 1.
    MinN(MinNArgs),
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Horizon.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Drift; the step mean is mu/sqrt(N).
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Step standard deviation, at most R/2 [default: 0.5].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Steps lie in an interval of length R [default: 1].
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Boundary level.
    #[arg(long)]
    pub g: Option<f64>,
    /// Coupling failure probability [default: 1/N].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte Carlo paths for the Gaussian crossing term [default: 100000].
    #[arg(long)]
    pub paths: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub mu: f64,
    pub g: f64,
    pub alpha: f64,
    pub bound: f64,
    pub crossing: CrossingEstimate,
    pub nontrivial: bool,
}

fn crossing(paths: usize, seed: u64) -> CrossingConfig {
    CrossingConfig { paths, seed, ..CrossingConfig::default() }
}

/// JSON report, or CSV `N,mu,g,alpha,bound,crossing,ci_halfwidth,nontrivial`.
pub fn bound(ctx: &mut Ctx, args: BoundArgs) -> Result<()> {
    let n: usize = ctx.params.require("N", args.n)?;
    let mu: f64 = ctx.params.require("mu", args.mu)?;
    let sigma = ctx.params.get("sigma", args.sigma, 0.5)?;
    let r = ctx.params.get("R", args.r, 1.0)?;
    let g: f64 = ctx.params.require("g", args.g)?;
    let alpha = ctx.params.get("alpha", args.alpha, 1.0 / n.max(1) as f64)?;
    let paths = ctx.params.get("paths", args.paths, CrossingConfig::default().paths)?;
    let seed = ctx.seed(args.seed)?;

    let problem = HittingTimeProblem {
        n,
        r,
        mu_n: mu / (n as f64).sqrt(),
        sigma_n: sigma,
        boundary: Boundary::Constant(g),
        alpha,
    };
    let b = hitting_bound(&problem, &bound_config(), &SplitSearchConfig::default(), &crossing(paths, seed))?;
    let report = BoundReport { n, mu, g, alpha, bound: b.bound, crossing: b.crossing, nontrivial: b.nontrivial() };
    if ctx.json {
        return ctx.emit_json(&report);
    }
    let row = (n, mu, g, alpha, report.bound, report.crossing.point, report.crossing.ci_halfwidth, report.nontrivial);
    ctx.emit_csv(&["N", "mu", "g", "alpha", "bound", "crossing", "ci_halfwidth", "nontrivial"], &[row])
}

#[derive(Debug, Args)]
pub struct MinNArgs {
    /// Negative drifts, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu: Option<Vec<f64>>,
    /// Boundary levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub g: Option<Vec<f64>>,
    /// [default: 1]
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Monte Carlo paths per bound [default: 100000].
    #[arg(long)]
    pub paths: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Search N = 2^1 ..= 2^max_exponent [default: 24].
    #[arg(long)]
    pub max_exponent: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinNRow {
    pub mu: f64,
    pub g: f64,
    pub outcome: MinNOutcome,
}

/// A single `(mu, g)` printed to the terminal gives just the integer; otherwise
/// CSV `mu,g,min_N` with an empty `min_N` when no N qualifies.
pub fn min_n(ctx: &mut Ctx, args: MinNArgs) -> Result<()> {
    let mus: Vec<f64> = ctx.params.require("mu", args.mu)?;
    let gs: Vec<f64> = ctx.params.require("g", args.g)?;
    let r = ctx.params.get("R", args.r, 1.0)?;
    let sigma = ctx.params.get("sigma", args.sigma, 0.5)?;
    let paths = ctx.params.get("paths", args.paths, CrossingConfig::default().paths)?;
    let max_exponent = ctx.params.get("max-exponent", args.max_exponent, 24)?;
    let seed = ctx.seed(args.seed)?;

    let mut sweep = HittingSweep::new(r, sigma, crossing(paths, seed))?;
    sweep.max_exponent = max_exponent;
    let mut rows = Vec::new();
    for &mu in &mus {
        for &g in &gs {
            rows.push(MinNRow { mu, g, outcome: sweep.min_nontrivial_n(mu, g)? });
        }
    }
    if ctx.json {
        return ctx.emit_json(&rows);
    }
    if rows.len() == 1 && ctx.plain_stdout() {
        return match rows[0].outcome {
            MinNOutcome::Found { n, .. } => ctx.emit_text(&n.to_string()),
            MinNOutcome::TrivialUpTo { n_max } => bail!("no N up to {n_max} gives a bound below 1"),
        };
    }
    let csv_rows: Vec<(f64, f64, Option<usize>)> = rows
        .iter()
        .map(|row| {
            let n = match row.outcome {
                MinNOutcome::Found { n, .. } => Some(n),
                MinNOutcome::TrivialUpTo { .. } => None,
            };
            (row.mu, row.g, n)
        })
        .collect();
    ctx.emit_csv(&["mu", "g", "min_N"], &csv_rows)
}
