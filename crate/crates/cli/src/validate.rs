use anyhow::Result;
use clap::{Args, Subcommand};

use kmt_core::oracles::{coverage_experiment, dominance_report};

use crate::output::Ctx;
use crate::params::usage;
use crate::thresholds::bound_config;

#[derive(Debug, Subcommand)]
pub enum ValidateCmd {
    /// Brute-force conditional Wasserstein distances against the bound.
    Wasserstein(WassersteinArgs),
    /// Exceedance frequency of both schedules under the dyadic coupling.
    Coverage(CoverageArgs),
}

#[derive(Debug, Args)]
pub struct WassersteinArgs {
    /// Support points, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alphabet: Option<Vec<f64>>,
    /// Probabilities of the support points [default: uniform].
    #[arg(long, value_delimiter = ',')]
    pub probs: Option<Vec<f64>>,
    /// Multiset size, at most 12.
    #[arg(long)]
    pub n: Option<usize>,
    /// Conditioning sizes [default: 1..n-1].
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Wasserstein orders [default: 2,3,4].
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<u32>>,
    /// [default: width of the alphabet]
    #[arg(long = "R")]
    pub r: Option<f64>,
}

pub fn wasserstein(ctx: &mut Ctx, args: WassersteinArgs) -> Result<()> {
    let alphabet: Vec<f64> = ctx.params.require("alphabet", args.alphabet)?;
    if alphabet.len() < 2 {
        return usage("alphabet needs at least two points");
    }
    let uniform = vec![1.0 / alphabet.len() as f64; alphabet.len()];
    let probs = ctx.params.get("probs", args.probs, uniform)?;
    let n: usize = ctx.params.require("n", args.n)?;
    let ks = ctx.params.get("k", args.k, (1..n.max(1)).collect())?;
    let ps = ctx.params.get("p", args.p, vec![2, 3, 4])?;
    let lo = alphabet.iter().copied().fold(0.0, f64::min);
    let hi = alphabet.iter().copied().fold(0.0, f64::max);
    let r = ctx.params.get("R", args.r, hi - lo)?;
    let report = dominance_report(&alphabet, &probs, n, &ks, &ps, r, &bound_config())?;
    ctx.emit_json(&report)
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    /// Sample size, a power of two [default: 256].
    #[arg(long)]
    pub n: Option<usize>,
    /// [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// [default: 2000]
    #[arg(long)]
    pub trials: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Success probability of the binary steps [default: 0.5].
    #[arg(long)]
    pub q: Option<f64>,
    /// Step size [default: 1].
    #[arg(long = "R")]
    pub r: Option<f64>,
}

pub fn coverage(ctx: &mut Ctx, args: CoverageArgs) -> Result<()> {
    let n = ctx.params.get("n", args.n, 256)?;
    let alpha = ctx.params.get("alpha", args.alpha, 0.05)?;
    let trials = ctx.params.get("trials", args.trials, 2000)?;
    let q = ctx.params.get("q", args.q, 0.5)?;
    let r = ctx.params.get("R", args.r, 1.0)?;
    let seed = ctx.seed(args.seed)?;
    let report = coverage_experiment(n, q, r, alpha, trials, seed, &bound_config())?;
    ctx.emit_json(&report)
}
