//! Online mean-shift detection with CUSUM thresholds calibrated by the
//! coupling schedules.
//!
//! Time is split into dyadic blocks `(N_{i−1}, N_i]` of length `2^{L_i}`. Each
//! block gets its own coupling thresholds, computed lazily when the stream
//! enters it, and the CUSUM threshold `𝒞_{s,t}` combines them with a
//! time-uniform Gaussian bound.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::{
    default_variance_cs, quantize_ratio, ScheduleCache, VarianceConfidenceSequence, VarianceInterval,
};
use crate::error::{domain, KmtError, Result};
use crate::scheduler::{trivial_delta_star, trivial_unit_bridge, SplitSearchConfig};
use crate::wasserstein::BoundSearchConfig;

/// Block exponents `L_1 < L_2 < …` and the block ends `N_i = Σ_{j≤i} 2^{L_j}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGrid {
    l_seq: Vec<u32>,
    ends: Vec<usize>,
}

impl BlockGrid {
    pub fn new(l_seq: Vec<u32>) -> Result<Self> {
        if l_seq.is_empty() {
            return Err(KmtError::Config("block grid needs at least one block".into()));
        }
        if l_seq.windows(2).any(|w| w[0] >= w[1]) {
            return Err(KmtError::Config(format!("block exponents must increase strictly: {l_seq:?}")));
        }
        if l_seq.iter().any(|&l| l > 40) {
            return Err(KmtError::Config("block exponent above 40".into()));
        }
        let mut ends = Vec::with_capacity(l_seq.len());
        let mut acc = 0usize;
        for &l in &l_seq {
            acc += 1usize << l;
            ends.push(acc);
        }
        Ok(Self { l_seq, ends })
    }

    /// `L_i = i + offset` for `i = 1..=count`.
    pub fn arithmetic(offset: u32, count: usize) -> Result<Self> {
        Self::new((1..=count as u32).map(|i| i + offset).collect())
    }

    /// Default grid `L_i = i + 5` with enough blocks to cover `horizon`.
    pub fn covering(horizon: usize) -> Result<Self> {
        let mut count = 1;
        while (1..=count as u32).map(|i| 1usize << (i + 5)).sum::<usize>() < horizon {
            count += 1;
        }
        Self::arithmetic(5, count)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.l_seq
    }

    /// `N_1, N_2, …`.
    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn horizon(&self) -> usize {
        *self.ends.last().expect("nonempty grid")
    }

    /// `N_i`, with `N_0 = 0`.
    pub fn end(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.ends[i - 1]
        }
    }

    pub fn block_len(&self, i: usize) -> usize {
        1usize << self.l_seq[i - 1]
    }

    /// `(ℓ_L(k), u_L(k))`: the last block ending at or before `k` and the
    /// first block ending at or after `k`.
    pub fn lookup(&self, k: usize) -> Result<(usize, usize)> {
        if k == 0 {
            return domain("grid index must be positive");
        }
        if k > self.horizon() {
            return Err(KmtError::Config(format!("index {k} beyond grid horizon {}", self.horizon())));
        }
        let u = self.ends.partition_point(|&e| e < k) + 1;
        let l = if self.end(u) == k { u } else { u - 1 };
        Ok((l, u))
    }
}

/// Budget `δ₂·β^{−(i−1)}·(1 − 1/β)` of block `i ≥ 1`; the budgets sum to `δ₂`.
pub fn block_budget(i: usize, delta2: f64, beta: f64) -> f64 {
    delta2 * beta.powi(-(i as i32 - 1)) * (1.0 - 1.0 / beta)
}

/// `|mean(Y_1..Y_s) − mean(Y_{s+1}..Y_t)|` from prefix sums with `prefix[0] = 0`.
pub fn cusum(prefix: &[f64], s: usize, t: usize) -> Result<f64> {
    if !(0 < s && s < t && t < prefix.len()) {
        return domain(format!("need 0 < s < t <= {}, got s={s}, t={t}", prefix.len().saturating_sub(1)));
    }
    let head = prefix[s] / s as f64;
    let tail = (prefix[t] - prefix[s]) / (t - s) as f64;
    Ok((head - tail).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// `s ∈ {t − 2^j} ∪ {N_i < t}`.
    Geometric,
    /// Every `s < t`.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub delta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub beta: f64,
    pub r: f64,
    pub grid: BlockGrid,
    pub scan: ScanMode,
    pub bounds: BoundSearchConfig,
    pub split: SplitSearchConfig,
}

impl DetectorConfig {
    /// `δ = 0.05`, `δ₁ = δ₂ = 0.01`, `β = 2`, default grid covering `horizon`.
    pub fn new(r: f64, horizon: usize) -> Result<Self> {
        Ok(Self {
            delta: 0.05,
            delta1: 0.01,
            delta2: 0.01,
            beta: 2.0,
            r,
            grid: BlockGrid::covering(horizon)?,
            scan: ScanMode::Geometric,
            bounds: BoundSearchConfig::for_budget(1e-4),
            split: SplitSearchConfig::default(),
        })
    }

    /// `δ₃ = δ − δ₁ − δ₂`, the Gaussian part of the budget.
    pub fn delta3(&self) -> f64 {
        self.delta - self.delta1 - self.delta2
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("delta1", self.delta1), ("delta2", self.delta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(KmtError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.delta3() <= 0.0 {
            return Err(KmtError::Config(format!(
                "delta1 + delta2 = {} must be below delta = {}",
                self.delta1 + self.delta2,
                self.delta
            )));
        }
        if !(self.beta > 1.0) {
            return Err(KmtError::Config(format!("beta must exceed 1, got {}", self.beta)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(KmtError::Config(format!("R must be positive, got {}", self.r)));
        }
        self.bounds.validate()?;
        self.split.validate()
    }
}

/// Thresholds of one materialized block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockThresholds {
    pub index: usize,
    pub start: usize,
    pub len: usize,
    pub budget: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Unit trivial-branch schedule at `alpha0`, used when `σ̂^L = 0`.
    fallback_unit: Vec<f64>,
    /// `δ̃*` once the block is complete.
    final_delta_star: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub s: usize,
    pub t: usize,
    pub statistic: f64,
    pub threshold: f64,
}

/// Online detector; feed observations with [`Detector::push`].
pub struct Detector<C: VarianceConfidenceSequence> {
    cfg: DetectorConfig,
    cs: C,
    cache: Arc<ScheduleCache>,
    prefix: Vec<f64>,
    intervals: Vec<VarianceInterval>,
    /// `Δ̃_k` for every observed `k`.
    bridge: Vec<f64>,
    blocks: Vec<BlockThresholds>,
    alarm: Option<Alarm>,
}

impl<C: VarianceConfidenceSequence> Detector<C> {
    pub fn new(cfg: DetectorConfig, cs: C) -> Result<Self> {
        cfg.validate()?;
        let cache = Arc::new(ScheduleCache::new(cfg.bounds.clone(), cfg.split.clone())?);
        Self::with_cache(cfg, cs, cache)
    }

    /// Shares unit schedules with other detectors built from the same settings.
    pub fn with_cache(cfg: DetectorConfig, cs: C, cache: Arc<ScheduleCache>) -> Result<Self> {
        cfg.validate()?;
        if cs.delta() > cfg.delta1 * (1.0 + 1e-12) {
            return Err(KmtError::Config(format!(
                "confidence sequence budget {} exceeds delta1 = {}",
                cs.delta(),
                cfg.delta1
            )));
        }
        if (cs.range() - cfg.r).abs() > 1e-12 * cfg.r {
            return Err(KmtError::Config("confidence sequence range differs from R".into()));
        }
        if cache.bound_config() != &cfg.bounds || cache.split_config() != &cfg.split {
            return Err(KmtError::Config("schedule cache built with different search settings".into()));
        }
        Ok(Self {
            cfg,
            cs,
            cache,
            prefix: vec![0.0],
            intervals: Vec::new(),
            bridge: Vec::new(),
            blocks: Vec::new(),
            alarm: None,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Number of observations so far.
    pub fn time(&self) -> usize {
        self.prefix.len() - 1
    }

    pub fn alarm(&self) -> Option<Alarm> {
        self.alarm
    }

    pub fn prefix_sums(&self) -> &[f64] {
        &self.prefix
    }

    pub fn blocks(&self) -> &[BlockThresholds] {
        &self.blocks
    }

    /// Feeds `Y_t` and scans for an alarm. Returns the alarm the first time
    /// one is raised; later calls keep updating state but do not rescan.
    pub fn push(&mut self, y: f64) -> Result<Option<Alarm>> {
        let t = self.time() + 1;
        if t > self.cfg.grid.horizon() {
            return Err(KmtError::Config(format!("stream exceeds grid horizon {}", self.cfg.grid.horizon())));
        }
        let (_, u) = self.cfg.grid.lookup(t)?;
        if u > self.blocks.len() {
            self.materialize(u)?;
        }
        let iv = self.cs.observe(y)?;
        self.prefix.push(self.prefix[t - 1] + y);
        self.intervals.push(iv);
        let delta_k = self.bridge_threshold(t, u, iv)?;
        self.bridge.push(delta_k);
        if t == self.cfg.grid.end(u) {
            let ds = self.block_delta_star(u, t)?;
            self.blocks[u - 1].final_delta_star = Some(ds);
        }
        if self.alarm.is_some() || t < 2 {
            return Ok(None);
        }
        for s in self.scan_set(t) {
            let stat = cusum(&self.prefix, s, t)?;
            let threshold = self.threshold(s, t)?;
            if stat > threshold {
                let alarm = Alarm { s, t, statistic: stat, threshold };
                self.alarm = Some(alarm);
                return Ok(Some(alarm));
            }
        }
        Ok(None)
    }

    fn scan_set(&self, t: usize) -> Vec<usize> {
        match self.cfg.scan {
            ScanMode::Exhaustive => (1..t).collect(),
            ScanMode::Geometric => {
                let mut set: Vec<usize> = std::iter::successors(Some(1usize), |g| g.checked_mul(2))
                    .take_while(|&g| g < t)
                    .map(|g| t - g)
                    .chain(self.cfg.grid.ends().iter().copied().filter(|&e| e < t))
                    .collect();
                set.sort_unstable();
                set.dedup();
                set
            }
        }
    }

    fn materialize(&mut self, upto: usize) -> Result<()> {
        while self.blocks.len() < upto {
            let i = self.blocks.len() + 1;
            let start = self.cfg.grid.end(i - 1);
            let len = self.cfg.grid.block_len(i);
            let budget = block_budget(i, self.cfg.delta2, self.cfg.beta);
            // The split depends on data before the block only.
            let ratio = match self.intervals.last() {
                Some(iv) if iv.lower > 0.0 => self.cfg.r / iv.lower,
                Some(iv) if iv.upper > 0.0 => self.cfg.r / iv.upper,
                _ => 2.0,
            };
            let (j, _) = quantize_ratio(ratio.max(2.0))?;
            let alpha0 = self.cache.sum(len, j, budget)?.meta.alpha0_star.expect("sum schedules record their split");
            let fallback_unit = trivial_unit_bridge(len, alpha0, &self.cfg.bounds)?;
            self.blocks.push(BlockThresholds {
                index: i,
                start,
                len,
                budget,
                alpha0,
                alpha1: budget - alpha0,
                fallback_unit,
                final_delta_star: None,
            });
        }
        Ok(())
    }

    /// `Δ̃_k`: `σ̂_k^U·Δ_{k−N_{i−1}}(α₀, R/σ̂_k^L, 1)`, capped by the trivial bound.
    fn bridge_threshold(&self, k: usize, block: usize, iv: VarianceInterval) -> Result<f64> {
        let b = &self.blocks[block - 1];
        let local = k - b.start;
        let fallback = (iv.upper + SQRT_2 * self.cfg.r) * b.fallback_unit[local - 1];
        if iv.lower <= 0.0 {
            return Ok(fallback);
        }
        let (j, _) = quantize_ratio(self.cfg.r / iv.lower)?;
        let schedule = self.cache.bridge(b.len, j, b.alpha0)?;
        Ok((iv.upper * schedule.values[local - 1]).min(fallback))
    }

    /// `δ̃*` of `block` using the interval at time `at`.
    fn block_delta_star(&self, block: usize, at: usize) -> Result<f64> {
        let b = &self.blocks[block - 1];
        let iv = self.intervals[at - 1];
        let fallback = trivial_delta_star(b.len as u64, self.cfg.r, iv.upper, b.alpha1, &self.cfg.bounds)?;
        if iv.lower <= 0.0 {
            return Ok(fallback);
        }
        let (j, _) = quantize_ratio(self.cfg.r / iv.lower)?;
        Ok((iv.upper * self.cache.delta_star(b.len, j, b.alpha1)?).min(fallback))
    }

    /// `δ̃*_i` as seen at time `t`: final once the block is complete, otherwise
    /// from the latest interval.
    pub fn delta_star_at(&self, block: usize, t: usize) -> Result<f64> {
        if block > self.blocks.len() {
            return Err(KmtError::NotMaterialized(block));
        }
        match self.blocks[block - 1].final_delta_star {
            Some(v) => Ok(v),
            None => self.block_delta_star(block, t.min(self.cfg.grid.end(block))),
        }
    }

    /// `Δ̃_k`, zero at block ends.
    pub fn bridge_at(&self, k: usize) -> Result<f64> {
        self.bridge.get(k - 1).copied().ok_or_else(|| {
            let (_, u) = self.cfg.grid.lookup(k).unwrap_or((0, 0));
            KmtError::NotMaterialized(u)
        })
    }

    /// Coupling error allowance `g_β(t, s, δ₂)` for the pair `s < t`.
    pub fn g_beta(&self, s: usize, t: usize) -> Result<f64> {
        if !(0 < s && s < t) {
            return domain(format!("need 0 < s < t, got s={s}, t={t}"));
        }
        if t > self.time() {
            let (_, u) = self.cfg.grid.lookup(t)?;
            return Err(KmtError::NotMaterialized(u));
        }
        let grid = &self.cfg.grid;
        let (ls, us) = grid.lookup(s)?;
        let (lt, ut) = grid.lookup(t)?;
        let ratio = s as f64 / t as f64;
        let mut g = 0.0;
        for k in 1..=ls {
            g += self.delta_star_at(k, t)? * (1.0 - ratio);
        }
        if us == ut {
            g += ratio * self.delta_star_at(us, t)?;
        } else {
            for k in (us + 1)..=lt {
                g += ratio * self.delta_star_at(k, t)?;
            }
            if lt != ut {
                let frac_t = (t - grid.end(lt)) as f64 / (grid.end(ut) - grid.end(lt)) as f64;
                g += ratio * frac_t * self.delta_star_at(ut, t)?;
            }
            if ls != us {
                let frac_s = (s - grid.end(ls)) as f64 / (grid.end(us) - grid.end(ls)) as f64;
                g += (frac_s - ratio).abs() * self.delta_star_at(us, t)?;
            }
        }
        g += self.bridge_at(s)? + ratio * self.bridge_at(t)?;
        Ok(g)
    }

    /// `𝒞_{s,t}`.
    pub fn threshold(&self, s: usize, t: usize) -> Result<f64> {
        let g = self.g_beta(s, t)?;
        let sigma_u = self.intervals[t - 1].upper;
        Ok(gaussian_part(s, t, sigma_u, self.cfg.delta3()) + t as f64 / (s * (t - s)) as f64 * g)
    }
}

/// `σ·√(t/(s(t−s)))·√((1 + 1/t)·2·log(2(t−1)√(t+1)/δ₃))`.
pub fn gaussian_part(s: usize, t: usize, sigma: f64, delta3: f64) -> f64 {
    let (sf, tf) = (s as f64, t as f64);
    let log_arg = 2.0 * (tf - 1.0) * (tf + 1.0).sqrt() / delta3;
    sigma * (tf / (sf * (tf - sf))).sqrt() * ((1.0 + 1.0 / tf) * 2.0 * log_arg.ln()).sqrt()
}

/// Settings of the synthetic detection experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub shift: f64,
    /// Each observation averages this many uniforms.
    pub ell: usize,
    pub change_at: usize,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub shift: f64,
    pub trials: usize,
    /// Share of trials alarming after the change.
    pub detection_rate: f64,
    /// Share of trials alarming at or before the change.
    pub false_alarm_rate: f64,
    pub mean_delay: Option<f64>,
    pub median_delay: Option<f64>,
    pub p90_delay: Option<f64>,
}

/// Outcome of one stream: the alarm time, if any.
pub fn run_trial(
    exp: &ExperimentConfig,
    cfg: &DetectorConfig,
    cache: &Arc<ScheduleCache>,
    trial: u64,
) -> Result<Option<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
    rng.set_stream(trial);
    let cs = default_variance_cs(cfg.r, cfg.delta1)?;
    let mut det = Detector::with_cache(cfg.clone(), cs, Arc::clone(cache))?;
    for t in 1..=exp.horizon {
        let mean: f64 = (0..exp.ell).map(|_| rng.random::<f64>()).sum::<f64>() / exp.ell as f64;
        let y = if t > exp.change_at { mean + exp.shift } else { mean };
        if let Some(alarm) = det.push(y)? {
            return Ok(Some(alarm.t));
        }
    }
    Ok(None)
}

/// Runs `trials` independent streams of averaged uniforms, shifted by `shift`
/// after `change_at`, through the detector.
pub fn run_detection_experiment(exp: &ExperimentConfig, cfg: &DetectorConfig) -> Result<DetectionSummary> {
    if exp.ell == 0 || exp.trials == 0 || exp.horizon < 2 {
        return domain("ell, trials must be positive and horizon at least 2");
    }
    if !(exp.shift >= 0.0) || 1.0 + exp.shift > cfg.r {
        return domain(format!("shifted observations must fit in [0, R]; shift={}, R={}", exp.shift, cfg.r));
    }
    if exp.horizon > cfg.grid.horizon() {
        return Err(KmtError::Config("experiment horizon exceeds block grid".into()));
    }
    cfg.validate()?;
    let cache = Arc::new(ScheduleCache::new(cfg.bounds.clone(), cfg.split.clone())?);
    let outcomes = (0..exp.trials as u64)
        .into_par_iter()
        .map(|trial| run_trial(exp, cfg, &cache, trial))
        .collect::<Result<Vec<_>>>()?;
    let mut delays: Vec<f64> =
        outcomes.iter().flatten().filter(|&&t| t > exp.change_at).map(|&t| (t - exp.change_at) as f64).collect();
    let false_alarms = outcomes.iter().flatten().filter(|&&t| t <= exp.change_at).count();
    delays.sort_by(f64::total_cmp);
    let quantile = |q: f64| -> Option<f64> {
        if delays.is_empty() {
            None
        } else {
            Some(delays[((delays.len() - 1) as f64 * q).round() as usize])
        }
    };
    Ok(DetectionSummary {
        shift: exp.shift,
        trials: exp.trials,
        detection_rate: delays.len() as f64 / exp.trials as f64,
        false_alarm_rate: false_alarms as f64 / exp.trials as f64,
        mean_delay: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
        median_delay: quantile(0.5),
        p90_delay: quantile(0.9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cusum_examples() {
        let prefix = |ys: &[f64]| {
            let mut p = vec![0.0];
            for y in ys {
                p.push(p.last().unwrap() + y);
            }
            p
        };
        assert_eq!(cusum(&prefix(&[1.0, 1.0, 0.0, 0.0]), 2, 4).unwrap(), 1.0);
        assert_eq!(cusum(&prefix(&[0.0, 1.0, 0.0, 1.0]), 1, 3).unwrap(), 0.5);
        let c = prefix(&[0.3; 10]);
        for t in 2..=10 {
            for s in 1..t {
                assert!(cusum(&c, s, t).unwrap() < 1e-15);
            }
        }
        assert!(cusum(&c, 0, 3).is_err());
        assert!(cusum(&c, 3, 3).is_err());
        assert!(cusum(&c, 3, 11).is_err());
    }

    #[test]
    fn grid_lookup_examples() {
        let g = BlockGrid::new(vec![1, 2, 3]).unwrap();
        assert_eq!(g.ends(), &[2, 6, 14]);
        assert_eq!(g.lookup(5).unwrap(), (1, 2));
        assert_eq!(g.lookup(6).unwrap(), (2, 2));
        assert_eq!(g.lookup(1).unwrap(), (0, 1));
        assert_eq!(g.lookup(2).unwrap(), (1, 1));
        assert!(g.lookup(15).is_err());
        assert!(BlockGrid::new(vec![2, 2]).is_err());
    }

    #[test]
    fn block_budgets_sum_to_delta2() {
        let total: f64 = (1..=60).map(|i| block_budget(i, 0.01, 2.0)).sum();
        let tail = 0.01 * 2f64.powi(-60);
        assert!((total + tail - 0.01).abs() < 1e-12);
    }

    #[test]
    fn gaussian_part_at_t2() {
        let v = gaussian_part(1, 2, 0.5, 0.03);
        let expected = 0.5 * SQRT_2 * (3.0 * (2.0 * 3f64.sqrt() / 0.03).ln()).sqrt();
        assert!((v - expected).abs() < 1e-12);
        assert!(gaussian_part(1, 2, 0.5, 0.04) < v);
    }

    #[test]
    fn covering_grid_reaches_horizon() {
        let g = BlockGrid::covering(4096).unwrap();
        assert_eq!(g.exponents()[0], 6);
        assert!(g.horizon() >= 4096);
        assert!(g.end(g.exponents().len() - 1) < 4096);
    }
}
