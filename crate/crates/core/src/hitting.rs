//! Upper bounds on `P(τ_N ≥ N)` for first hitting times of bounded random
//! walks, via the sum schedule and a Monte-Carlo Gaussian crossing term.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, KmtError, Result};
use crate::scheduler::{build_sum_schedule, SplitSearchConfig, ThresholdSchedule};
use crate::special::normal_quantile;
use crate::wasserstein::{BoundSearchConfig, BoundedModel};

/// Boundary `g_i^N`, `i = 1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Constant(f64),
    Tabulated(Vec<f64>),
}

impl Boundary {
    fn at(&self, i: usize) -> f64 {
        match self {
            Boundary::Constant(g) => *g,
            Boundary::Tabulated(v) => v[i - 1],
        }
    }
}

/// Walk `W_i = Σ_{j≤i} X_j` with `X_j ∈ [−R/2, R/2]`, mean `μ_N`, standard
/// deviation `σ_N`, stopped when it reaches `g_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingTimeProblem {
    pub n: usize,
    pub r: f64,
    pub mu_n: f64,
    pub sigma_n: f64,
    pub boundary: Boundary,
    pub alpha: f64,
}

impl HittingTimeProblem {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return domain("N must be positive");
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return domain(format!("R must be positive, got {}", self.r));
        }
        if !(self.mu_n.abs() <= self.r / 2.0) {
            return domain(format!("|mu_N| must not exceed R/2, got mu_N={}", self.mu_n));
        }
        if !(self.sigma_n > 0.0 && self.sigma_n <= self.r / 2.0) {
            return domain(format!("sigma_N must lie in (0, R/2], got {}", self.sigma_n));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return domain(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        match &self.boundary {
            Boundary::Constant(g) if g.is_nan() => domain("boundary is NaN"),
            Boundary::Tabulated(v) if v.len() != self.n => {
                domain(format!("tabulated boundary has {} entries, expected {}", v.len(), self.n))
            }
            Boundary::Tabulated(v) if v.iter().any(|g| g.is_nan()) => domain("boundary contains NaN"),
            _ => Ok(()),
        }
    }

    /// Model of the shifted variables `X + R/2 ∈ [0, R]`.
    pub fn model(&self) -> Result<BoundedModel> {
        BoundedModel::new(self.r, self.sigma_n)
    }

    /// Length of the dyadic schedule covering `1..=N`.
    pub fn schedule_len(&self) -> usize {
        self.n.next_power_of_two()
    }
}

/// Monte-Carlo settings for the crossing term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingConfig {
    pub paths: usize,
    pub seed: u64,
    /// Up to this `N` the walk is checked at every integer time.
    pub exact_limit: usize,
    /// Beyond `exact_limit`: times `1..=dense_prefix` are always checked.
    pub dense_prefix: usize,
    /// Beyond `exact_limit`: evenly spaced checks.
    pub uniform_checkpoints: usize,
    /// Beyond `exact_limit`: geometric checks `dense_prefix·ratio^m`.
    pub geometric_ratio: f64,
    /// Paths per RNG stream.
    pub chunk: usize,
}

impl Default for CrossingConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            seed: 0,
            exact_limit: 4096,
            dense_prefix: 256,
            uniform_checkpoints: 2048,
            geometric_ratio: 1.01,
            chunk: 1024,
        }
    }
}

impl CrossingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 || self.chunk == 0 {
            return Err(KmtError::Config("paths and chunk must be positive".into()));
        }
        if self.dense_prefix == 0 || self.uniform_checkpoints == 0 {
            return Err(KmtError::Config("checkpoint counts must be positive".into()));
        }
        if !(self.geometric_ratio > 1.0) {
            return Err(KmtError::Config(format!("geometric_ratio must exceed 1, got {}", self.geometric_ratio)));
        }
        Ok(())
    }

    /// Times at which the walk is compared with the boundary. Checking a
    /// subset of times can only enlarge the estimated probability.
    pub fn checkpoints(&self, n: usize) -> Vec<usize> {
        if n <= self.exact_limit {
            return (1..=n).collect();
        }
        let mut times: Vec<usize> = (1..=self.dense_prefix.min(n)).collect();
        let k = self.uniform_checkpoints;
        times.extend((1..=k).map(|j| ((j as u128 * n as u128) / k as u128) as usize));
        let mut x = self.dense_prefix as f64;
        while x < n as f64 {
            times.push(x.round() as usize);
            x *= self.geometric_ratio;
        }
        times.push(n);
        times.retain(|&t| t >= 1 && t <= n);
        times.sort_unstable();
        times.dedup();
        times
    }
}

/// Estimate of `P(∀ checked i: B_i ≤ c_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEstimate {
    pub point: f64,
    /// 99% normal-approximation half-width, clipped to keep the interval in `[0, 1]`.
    pub ci_halfwidth: f64,
    pub paths: usize,
    pub seed: u64,
    pub checkpoints: usize,
}

impl CrossingEstimate {
    pub fn upper(&self) -> f64 {
        self.point + self.ci_halfwidth
    }
}

fn z99() -> f64 {
    normal_quantile(0.995)
}

/// Probability that a standard Gaussian walk stays at or below `levels[j]`
/// at every time `times[j]`.
pub fn estimate_crossing(times: &[usize], levels: &[f64], cfg: &CrossingConfig) -> Result<CrossingEstimate> {
    cfg.validate()?;
    if times.len() != levels.len() || times.is_empty() {
        return domain("times and levels must be nonempty and of equal length");
    }
    if times.windows(2).any(|w| w[0] >= w[1]) || times[0] == 0 {
        return domain("times must be positive and strictly increasing");
    }
    if levels.iter().any(|c| c.is_nan()) {
        return domain("levels contain NaN");
    }
    let steps: Vec<f64> =
        std::iter::once(times[0]).chain(times.windows(2).map(|w| w[1] - w[0])).map(|d| (d as f64).sqrt()).collect();
    let chunks = cfg.paths.div_ceil(cfg.chunk);
    let survived: u64 = (0..chunks as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c);
            let count = cfg.chunk.min(cfg.paths - c as usize * cfg.chunk);
            let mut alive = 0u64;
            'path: for _ in 0..count {
                let mut b = 0.0;
                for (step, &level) in steps.iter().zip(levels) {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    b += step * xi;
                    if b > level {
                        continue 'path;
                    }
                }
                alive += 1;
            }
            alive
        })
        .sum();
    let m = cfg.paths as f64;
    let point = survived as f64 / m;
    let hw = z99() * (point * (1.0 - point) / m).sqrt();
    Ok(CrossingEstimate {
        point,
        ci_halfwidth: hw.min(point).min(1.0 - point),
        paths: cfg.paths,
        seed: cfg.seed,
        checkpoints: times.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingBound {
    /// `α + crossing.point`; may exceed 1.
    pub bound: f64,
    pub crossing: CrossingEstimate,
    #[serde(skip)]
    pub schedule: Arc<ThresholdSchedule>,
}

impl HittingBound {
    /// True when the bound is below 1 even at the upper end of the 99% interval.
    pub fn nontrivial(&self) -> bool {
        self.bound + self.crossing.ci_halfwidth < 1.0
    }
}

/// Sum schedule `𝒟(α)` for the shifted variables of `problem`.
pub fn hitting_schedule(
    problem: &HittingTimeProblem,
    bounds: &BoundSearchConfig,
    split: &SplitSearchConfig,
) -> Result<ThresholdSchedule> {
    problem.validate()?;
    build_sum_schedule(problem.schedule_len(), &problem.model()?, problem.alpha, bounds, split)
}

/// `P(τ_N ≥ N) ≤ α + P(∀i ≤ N: B_i ≤ (g_i − iμ_N + 𝒟_i(α))/σ_N)`.
pub fn hitting_bound(
    problem: &HittingTimeProblem,
    bounds: &BoundSearchConfig,
    split: &SplitSearchConfig,
    crossing: &CrossingConfig,
) -> Result<HittingBound> {
    let schedule = Arc::new(hitting_schedule(problem, bounds, split)?);
    hitting_bound_with_schedule(problem, schedule, crossing)
}

/// [`hitting_bound`] with a prebuilt schedule for the same `N`, `R`, `σ_N`, `α`.
pub fn hitting_bound_with_schedule(
    problem: &HittingTimeProblem,
    schedule: Arc<ThresholdSchedule>,
    crossing: &CrossingConfig,
) -> Result<HittingBound> {
    problem.validate()?;
    if schedule.values.len() < problem.n || schedule.alpha != problem.alpha {
        return Err(KmtError::Config("schedule does not match the problem".into()));
    }
    let times = crossing.checkpoints(problem.n);
    let levels: Vec<f64> = times
        .iter()
        .map(|&i| (problem.boundary.at(i) - i as f64 * problem.mu_n + schedule.values[i - 1]) / problem.sigma_n)
        .collect();
    let estimate = if levels.iter().all(|c| *c == f64::INFINITY) {
        CrossingEstimate {
            point: 1.0,
            ci_halfwidth: 0.0,
            paths: crossing.paths,
            seed: crossing.seed,
            checkpoints: times.len(),
        }
    } else {
        estimate_crossing(&times, &levels, crossing)?
    };
    Ok(HittingBound { bound: problem.alpha + estimate.point, crossing: estimate, schedule })
}

/// Result of the minimal-`N` search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum MinNOutcome {
    Found { n: usize, bound: f64, ci_halfwidth: f64 },
    TrivialUpTo { n_max: usize },
}

/// Minimal-`N` searches for fixed `R`, `σ`, with `α = 1/N` and `μ_N = μ/√N`.
/// Schedules depend only on `N` here, so they are shared across `(μ, g)`.
pub struct HittingSweep {
    pub r: f64,
    pub sigma: f64,
    pub max_exponent: u32,
    pub bounds: BoundSearchConfig,
    pub split: SplitSearchConfig,
    pub crossing: CrossingConfig,
    schedules: HashMap<u32, Arc<ThresholdSchedule>>,
}

impl HittingSweep {
    pub fn new(r: f64, sigma: f64, crossing: CrossingConfig) -> Result<Self> {
        BoundedModel::new(r, sigma)?;
        crossing.validate()?;
        Ok(Self {
            r,
            sigma,
            max_exponent: 24,
            bounds: BoundSearchConfig::for_budget(1e-4),
            split: SplitSearchConfig::default(),
            crossing,
            schedules: HashMap::new(),
        })
    }

    pub fn problem(&self, exponent: u32, mu: f64, g: f64) -> HittingTimeProblem {
        let n = 1usize << exponent;
        HittingTimeProblem {
            n,
            r: self.r,
            mu_n: mu / (n as f64).sqrt(),
            sigma_n: self.sigma,
            boundary: Boundary::Constant(g),
            alpha: 1.0 / n as f64,
        }
    }

    /// Bound at `N = 2^exponent`.
    pub fn bound_at(&mut self, exponent: u32, mu: f64, g: f64) -> Result<HittingBound> {
        let problem = self.problem(exponent, mu, g);
        problem.validate()?;
        let schedule = match self.schedules.get(&exponent) {
            Some(s) => Arc::clone(s),
            None => {
                let s = Arc::new(hitting_schedule(&problem, &self.bounds, &self.split)?);
                self.schedules.insert(exponent, Arc::clone(&s));
                s
            }
        };
        hitting_bound_with_schedule(&problem, schedule, &self.crossing)
    }

    /// Smallest `N = 2^j`, `1 ≤ j ≤ max_exponent`, whose bound is below 1 with
    /// 99% confidence. Binary search, so nontriviality is taken to be
    /// monotone in `N`.
    pub fn min_nontrivial_n(&mut self, mu: f64, g: f64) -> Result<MinNOutcome> {
        if !(mu < 0.0) {
            return domain(format!("mu must be negative, got {mu}"));
        }
        if !(g > 0.0) || !g.is_finite() {
            return domain(format!("g must be positive and finite, got {g}"));
        }
        if self.max_exponent == 0 || self.max_exponent > 40 {
            return Err(KmtError::Config(format!("max_exponent must lie in 1..=40, got {}", self.max_exponent)));
        }
        let top = self.bound_at(self.max_exponent, mu, g)?;
        if !top.nontrivial() {
            return Ok(MinNOutcome::TrivialUpTo { n_max: 1usize << self.max_exponent });
        }
        let (mut lo, mut hi) = (1u32, self.max_exponent);
        let mut best = top;
        while lo < hi {
            let mid = (lo + hi) / 2;
            let b = self.bound_at(mid, mu, g)?;
            if b.nontrivial() {
                hi = mid;
                best = b;
            } else {
                lo = mid + 1;
            }
        }
        if best.schedule.n != 1usize << hi {
            best = self.bound_at(hi, mu, g)?;
        }
        Ok(MinNOutcome::Found { n: 1usize << hi, bound: best.bound, ci_halfwidth: best.crossing.ci_halfwidth })
    }
}

/// One-off version of [`HittingSweep::min_nontrivial_n`].
pub fn min_nontrivial_n(mu: f64, g: f64, r: f64, sigma: f64, crossing: CrossingConfig) -> Result<MinNOutcome> {
    HittingSweep::new(r, sigma, crossing)?.min_nontrivial_n(mu, g)
}
