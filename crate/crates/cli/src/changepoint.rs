use anyhow::Result;
use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use kmt_core::changepoint::{
    run_detection_experiment, Alarm, BlockGrid, Detector, DetectorConfig, ExperimentConfig, ScanMode,
};
use kmt_core::empirical::default_variance_cs;

use crate::output::{read_numbers, Ctx};
use crate::params::usage;

#[derive(Debug, Subcommand)]
pub enum ChangepointCmd {
    /// Runs the detector over a stream of observations.
    Run(RunArgs),
    /// Detection rate and delay on synthetic streams of averaged uniforms.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scan {
    /// Split points `t − 2^j` and block ends.
    Geometric,
    /// Every split point.
    Exhaustive,
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    /// Observations lie in [0, R].
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Total false-alarm budget [default: 0.05].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Budget of the variance confidence sequence [default: 0.01].
    #[arg(long)]
    pub delta1: Option<f64>,
    /// Budget of the coupling events, spread over blocks [default: 0.01].
    #[arg(long)]
    pub delta2: Option<f64>,
    /// Geometric decay of the block budgets [default: 2].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Block exponents, block i having length 2^L_i [default: 6,7,8,...].
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<u32>>,
    /// [default: geometric]
    #[arg(long, value_enum)]
    pub scan: Option<Scan>,
}

impl DetectorArgs {
    fn resolve(self, ctx: &mut Ctx, default_r: f64, horizon: usize) -> Result<DetectorConfig> {
        let r = ctx.params.get("R", self.r, default_r)?;
        let mut cfg = DetectorConfig::new(r, horizon.max(2))?;
        cfg.delta = ctx.params.get("delta", self.delta, cfg.delta)?;
        cfg.delta1 = ctx.params.get("delta1", self.delta1, cfg.delta1)?;
        cfg.delta2 = ctx.params.get("delta2", self.delta2, cfg.delta2)?;
        cfg.beta = ctx.params.get("beta", self.beta, cfg.beta)?;
        if let Some(grid) = ctx.params.optional("grid", self.grid)? {
            cfg.grid = BlockGrid::new(grid)?;
        }
        cfg.scan = match ctx.params.get("scan", self.scan, Scan::Geometric)? {
            Scan::Geometric => ScanMode::Geometric,
            Scan::Exhaustive => ScanMode::Exhaustive,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// File of observations; `-` or absent reads stdin.
    #[arg(long)]
    pub input: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Observations consumed, up to and including the alarm.
    pub observations: usize,
    pub alarm: Option<Alarm>,
}

/// Stops at the first alarm. CSV `t,s,statistic,threshold` with at most one row.
pub fn run(ctx: &mut Ctx, args: RunArgs) -> Result<()> {
    let input: Option<String> = ctx.params.optional("input", args.input)?;
    let ys = read_numbers(input.as_deref())?;
    if ys.is_empty() {
        return usage("no observations in input");
    }
    let cfg = args.detector.resolve(ctx, 1.0, ys.len())?;
    let cs = default_variance_cs(cfg.r, cfg.delta1)?;
    let mut det = Detector::new(cfg, cs)?;
    let mut report = RunReport { observations: 0, alarm: None };
    for y in ys {
        report.observations += 1;
        if let Some(alarm) = det.push(y)? {
            report.alarm = Some(alarm);
            break;
        }
    }
    if ctx.json {
        return ctx.emit_json(&report);
    }
    let rows: Vec<_> = report.alarm.iter().map(|a| (a.t, a.s, a.statistic, a.threshold)).collect();
    ctx.emit_csv(&["t", "s", "statistic", "threshold"], &rows)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Mean shifts after the change [default: 0.02,0.05,0.1,0.2].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub shift: Option<Vec<f64>>,
    /// Uniforms averaged per observation [default: 30].
    #[arg(long)]
    pub ell: Option<usize>,
    /// Streams per shift [default: 100].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Stream length [default: 4096].
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Last pre-change time [default: horizon/2].
    #[arg(long)]
    pub change_at: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct SimulateRow {
    shift: f64,
    detection_rate: f64,
    mean_delay: Option<f64>,
}

/// CSV `shift,detection_rate,mean_delay`, or the full summaries as JSON.
/// R defaults to 1.2 so that shifted averages stay in range.
pub fn simulate(ctx: &mut Ctx, args: SimulateArgs) -> Result<()> {
    let shifts = ctx.params.get("shift", args.shift, vec![0.02, 0.05, 0.1, 0.2])?;
    let ell = ctx.params.get("ell", args.ell, 30)?;
    let trials = ctx.params.get("trials", args.trials, 100)?;
    let horizon = ctx.params.get("horizon", args.horizon, 4096)?;
    let change_at = ctx.params.get("change-at", args.change_at, horizon / 2)?;
    let seed = ctx.seed(args.seed)?;
    let cfg = args.detector.resolve(ctx, 1.2, horizon)?;

    let summaries = shifts
        .iter()
        .map(|&shift| {
            run_detection_experiment(&ExperimentConfig { shift, ell, change_at, horizon, trials, seed }, &cfg)
        })
        .collect::<kmt_core::Result<Vec<_>>>()?;
    if ctx.json {
        return ctx.emit_json(&summaries);
    }
    let rows: Vec<SimulateRow> = summaries
        .iter()
        .map(|s| SimulateRow { shift: s.shift, detection_rate: s.detection_rate, mean_delay: s.mean_delay })
        .collect();
    ctx.emit_csv(&["shift", "detection_rate", "mean_delay"], &rows)
}
