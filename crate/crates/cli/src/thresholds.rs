use std::sync::Arc;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use kmt_core::empirical::{default_variance_cs, EmpiricalKind, EmpiricalThresholds, ScheduleCache};
use kmt_core::scheduler::{build_bridge_schedule, build_sum_schedule, SplitSearchConfig, VariantConfig};
use kmt_core::wasserstein::{BoundSearchConfig, BoundedModel};

use crate::output::{read_numbers, Ctx};
use crate::params::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    /// Thresholds for the bridge `S_k − (k/n)·S_n`.
    Bridge,
    /// Thresholds for the partial sums `S_k`.
    Sum,
}

impl From<Kind> for EmpiricalKind {
    fn from(kind: Kind) -> Self {
        match kind {
            Kind::Bridge => EmpiricalKind::Bridge,
            Kind::Sum => EmpiricalKind::Sum,
        }
    }
}

pub fn bound_config() -> BoundSearchConfig {
    BoundSearchConfig::for_budget(1e-4)
}

#[derive(Debug, Args)]
pub struct ThresholdsArgs {
    /// Sample size; a power of two for `--kind sum`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Range bound: observations lie in an interval of length R [default: 1].
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Standard deviation, at most R/2.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Failure probability [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// [default: sum]
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    /// Level-weighted budgets with the almost-sure midpoint fallback.
    #[arg(long)]
    pub variant: bool,
}

/// CSV `k,value` or the full schedule as JSON.
pub fn thresholds(ctx: &mut Ctx, args: ThresholdsArgs) -> Result<()> {
    let n: usize = ctx.params.require("n", args.n)?;
    let r = ctx.params.get("R", args.r, 1.0)?;
    let sigma: f64 = ctx.params.require("sigma", args.sigma)?;
    let alpha = ctx.params.get("alpha", args.alpha, 0.05)?;
    let kind = ctx.params.get("kind", args.kind, Kind::Sum)?;
    let variant = ctx.params.switch("variant", args.variant)?.then(VariantConfig::default);

    let model = BoundedModel::new(r, sigma)?;
    let schedule = match kind {
        Kind::Bridge => build_bridge_schedule(n, &model, alpha, &bound_config(), variant.as_ref())?,
        Kind::Sum => {
            let split = SplitSearchConfig { variant, ..SplitSearchConfig::default() };
            build_sum_schedule(n, &model, alpha, &bound_config(), &split)?
        }
    };
    if ctx.json {
        return ctx.emit_json(&schedule);
    }
    let rows: Vec<(usize, f64)> = schedule.values.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect();
    ctx.emit_csv(&["k", "value"], &rows)
}

#[derive(Debug, Args)]
pub struct EmpiricalArgs {
    /// Planned stream length [default: number of observations read].
    #[arg(long)]
    pub n: Option<usize>,
    /// Observations lie in [0, R] [default: 1].
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Total failure probability [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Share of alpha spent on the variance confidence sequence [default: 0.1].
    #[arg(long)]
    pub rho: Option<f64>,
    /// [default: sum]
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    /// File of observations; `-` or absent reads stdin.
    #[arg(long)]
    pub input: Option<String>,
}

#[derive(Serialize)]
struct EmpiricalRow {
    k: usize,
    sigma_lower: f64,
    sigma_upper: f64,
    threshold: f64,
}

/// Streams the input through data-driven thresholds. CSV
/// `k,sigma_L,sigma_U,threshold`, or the points as JSON.
pub fn empirical(ctx: &mut Ctx, args: EmpiricalArgs) -> Result<()> {
    let input: Option<String> = ctx.params.optional("input", args.input)?;
    let ys = read_numbers(input.as_deref())?;
    if ys.is_empty() {
        return usage("no observations in input");
    }
    let n = ctx.params.get("n", args.n, ys.len())?;
    let r = ctx.params.get("R", args.r, 1.0)?;
    let alpha = ctx.params.get("alpha", args.alpha, 0.05)?;
    let rho = ctx.params.get("rho", args.rho, 0.1)?;
    let kind = ctx.params.get("kind", args.kind, Kind::Sum)?;

    let cache = Arc::new(ScheduleCache::new(bound_config(), SplitSearchConfig::default())?);
    let cs = default_variance_cs(r, rho * alpha)?;
    let mut th = EmpiricalThresholds::new(n, alpha, rho, kind.into(), cs, cache)?;
    for y in ys {
        th.push(y)?;
    }
    if ctx.json {
        return ctx.emit_json(&th.points());
    }
    let rows: Vec<EmpiricalRow> = th
        .points()
        .iter()
        .map(|p| EmpiricalRow {
            k: p.k,
            sigma_lower: p.sigma_lower,
            sigma_upper: p.sigma_upper,
            threshold: p.threshold,
        })
        .collect();
    ctx.emit_csv(&["k", "sigma_L", "sigma_U", "threshold"], &rows)
}
