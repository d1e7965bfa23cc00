//! Thresholds for unknown `σ`: anytime-valid variance intervals and the
//! thresholds `σ̂_k^U · Δ_k(α(1−ρ), R/σ̂_k^L, 1)` built on them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{domain, KmtError, Result};
use crate::scheduler::{
    build_bridge_schedule, build_sum_schedule, delta_star, trivial_delta_star, trivial_unit_bridge, SplitSearchConfig,
    ThresholdSchedule,
};
use crate::wasserstein::{BoundSearchConfig, BoundedModel};

/// Ratio between consecutive points of the `R/σ` cache grid.
pub const RATIO_GRID_STEP: f64 = 1.1;

/// Interval `[σ̂_k^L, σ̂_k^U]` emitted after observation `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceInterval {
    pub k: usize,
    pub lower: f64,
    pub upper: f64,
}

/// A confidence sequence for `σ` of a `[0, R]`-valued stream. Interval `k`
/// depends on the first `k` observations only.
pub trait VarianceConfidenceSequence: Send {
    /// Failure probability over the whole sequence.
    fn delta(&self) -> f64;
    fn estimator_id(&self) -> &str;
    fn range(&self) -> f64;
    /// Consumes the next observation and returns the interval at that time.
    fn observe(&mut self, y: f64) -> Result<VarianceInterval>;
    fn intervals(&self) -> &[VarianceInterval];
}

fn check_observation(y: f64, r: f64) -> Result<()> {
    if !(0.0..=r).contains(&y) {
        return domain(format!("observation {y} outside [0, {r}]"));
    }
    Ok(())
}

/// Bernstein bounds on the unbiased sample variance, union-bounded over time
/// with budget `6δ/(π²k²)` at step `k` and intersected across steps.
///
/// The sample variance is a U-statistic with kernel `(y_i − y_j)²/2 ∈ [0, R²/2]`,
/// so it concentrates like a mean of `⌊k/2⌋` independent terms.
#[derive(Debug, Clone)]
pub struct BernsteinVarianceCs {
    r: f64,
    delta: f64,
    count: usize,
    mean: f64,
    m2: f64,
    lower: f64,
    upper: f64,
    history: Vec<VarianceInterval>,
}

/// The default confidence sequence for `σ` with failure budget `delta`.
pub fn default_variance_cs(r: f64, delta: f64) -> Result<BernsteinVarianceCs> {
    if !(r > 0.0 && r.is_finite()) {
        return domain(format!("R must be positive, got {r}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(BernsteinVarianceCs { r, delta, count: 0, mean: 0.0, m2: 0.0, lower: 0.0, upper: r / 2.0, history: Vec::new() })
}

impl BernsteinVarianceCs {
    /// Bounds on `σ²` from the first `count` observations alone.
    fn variance_bounds(&self) -> (f64, f64) {
        let pairs = self.count / 2;
        if pairs == 0 {
            return (0.0, self.r * self.r / 4.0);
        }
        let k = self.count as f64;
        let step_budget = 6.0 * self.delta / (PI * PI * k * k);
        let log_term = (2.0 / step_budget).ln();
        let b = self.r * self.r / 2.0;
        let m = pairs as f64;
        let u = self.m2 / (k - 1.0);
        // Upper tail (Bernstein): U − s ≤ a·√s + c. Lower tail of a nonnegative
        // kernel: s − U ≤ a·√s. Here a = √(2bℓ/m), c = 2bℓ/(3m); solve in √s.
        let a = (2.0 * b * log_term / m).sqrt();
        let c = 2.0 * b * log_term / (3.0 * m);
        let upper = 0.5 * (a + (a * a + 4.0 * u).sqrt());
        let lower = if u > c { 0.5 * (-a + (a * a + 4.0 * (u - c)).sqrt()) } else { 0.0 };
        (lower * lower, upper * upper)
    }
}

impl VarianceConfidenceSequence for BernsteinVarianceCs {
    fn delta(&self) -> f64 {
        self.delta
    }

    fn estimator_id(&self) -> &str {
        "bernstein-u-statistic"
    }

    fn range(&self) -> f64 {
        self.r
    }

    fn observe(&mut self, y: f64) -> Result<VarianceInterval> {
        check_observation(y, self.r)?;
        self.count += 1;
        let d = y - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (y - self.mean);
        let (var_lo, var_hi) = self.variance_bounds();
        self.lower = self.lower.max(var_lo.max(0.0).sqrt()).min(self.r / 2.0);
        self.upper = self.upper.min(var_hi.sqrt()).min(self.r / 2.0);
        if self.lower > self.upper {
            // Only possible on the failure event; keep the interval well formed.
            self.lower = self.upper;
        }
        let iv = VarianceInterval { k: self.count, lower: self.lower, upper: self.upper };
        self.history.push(iv);
        Ok(iv)
    }

    fn intervals(&self) -> &[VarianceInterval] {
        &self.history
    }
}

/// Constant intervals, for known-`σ` comparisons and tests.
#[derive(Debug, Clone)]
pub struct FixedVarianceCs {
    r: f64,
    lower: f64,
    upper: f64,
    history: Vec<VarianceInterval>,
}

impl FixedVarianceCs {
    pub fn new(r: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(0.0 <= lower && lower <= upper && upper <= r / 2.0) {
            return domain(format!("need 0 <= lower <= upper <= R/2, got [{lower}, {upper}], R={r}"));
        }
        Ok(Self { r, lower, upper, history: Vec::new() })
    }
}

impl VarianceConfidenceSequence for FixedVarianceCs {
    fn delta(&self) -> f64 {
        0.0
    }

    fn estimator_id(&self) -> &str {
        "fixed"
    }

    fn range(&self) -> f64 {
        self.r
    }

    fn observe(&mut self, y: f64) -> Result<VarianceInterval> {
        check_observation(y, self.r)?;
        let iv = VarianceInterval { k: self.history.len() + 1, lower: self.lower, upper: self.upper };
        self.history.push(iv);
        Ok(iv)
    }

    fn intervals(&self) -> &[VarianceInterval] {
        &self.history
    }
}

/// Smallest grid point `2·1.1^j ≥ ratio`, returned as `(j, value)`.
pub fn quantize_ratio(ratio: f64) -> Result<(u32, f64)> {
    if !(ratio >= 2.0 - 1e-12) || ratio.is_nan() {
        return domain(format!("R/σ must be at least 2, got {ratio}"));
    }
    if ratio.is_infinite() {
        return domain("R/σ is infinite");
    }
    let mut j = ((ratio / 2.0).ln() / RATIO_GRID_STEP.ln()).ceil().max(0.0) as u32;
    while j > 0 && ratio_grid_point(j - 1) >= ratio {
        j -= 1;
    }
    while ratio_grid_point(j) < ratio {
        j += 1;
    }
    Ok((j, ratio_grid_point(j)))
}

pub fn ratio_grid_point(j: u32) -> f64 {
    2.0 * RATIO_GRID_STEP.powi(j as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum CacheKind {
    Bridge,
    Sum,
    DeltaStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    kind: CacheKind,
    n: usize,
    grid_index: u32,
    alpha_bits: u64,
}

#[derive(Debug, Clone)]
enum Cached {
    Schedule(Arc<ThresholdSchedule>),
    Scalar(f64),
}

/// Unit-variance schedules on the quantized `R/σ` grid, shared across
/// streams with the same search settings.
#[derive(Debug)]
pub struct ScheduleCache {
    cfg: BoundSearchConfig,
    split: SplitSearchConfig,
    entries: Mutex<HashMap<CacheKey, Cached>>,
}

impl ScheduleCache {
    pub fn new(cfg: BoundSearchConfig, split: SplitSearchConfig) -> Result<Self> {
        cfg.validate()?;
        split.validate()?;
        Ok(Self { cfg, split, entries: Mutex::new(HashMap::new()) })
    }

    pub fn bound_config(&self) -> &BoundSearchConfig {
        &self.cfg
    }

    pub fn split_config(&self) -> &SplitSearchConfig {
        &self.split
    }

    fn lookup(&self, key: CacheKey, build: impl FnOnce() -> Result<Cached>) -> Result<Cached> {
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let value = build()?;
        self.entries.lock().expect("cache lock").insert(key, value.clone());
        Ok(value)
    }

    fn unit_model(grid_index: u32) -> Result<BoundedModel> {
        BoundedModel::new(ratio_grid_point(grid_index), 1.0)
    }

    /// `Δ(α, R̃_j, 1)` for block length `n`.
    pub fn bridge(&self, n: usize, grid_index: u32, alpha: f64) -> Result<Arc<ThresholdSchedule>> {
        let key = CacheKey { kind: CacheKind::Bridge, n, grid_index, alpha_bits: alpha.to_bits() };
        match self.lookup(key, || {
            let model = Self::unit_model(grid_index)?;
            build_bridge_schedule(n, &model, alpha, &self.cfg, None).map(|s| Cached::Schedule(Arc::new(s)))
        })? {
            Cached::Schedule(s) => Ok(s),
            Cached::Scalar(_) => unreachable!("bridge key holds a schedule"),
        }
    }

    /// Optimized-split `𝒟(α, R̃_j, 1)` for a dyadic `n`.
    pub fn sum(&self, n: usize, grid_index: u32, alpha: f64) -> Result<Arc<ThresholdSchedule>> {
        let key = CacheKey { kind: CacheKind::Sum, n, grid_index, alpha_bits: alpha.to_bits() };
        match self.lookup(key, || {
            let model = Self::unit_model(grid_index)?;
            build_sum_schedule(n, &model, alpha, &self.cfg, &self.split).map(|s| Cached::Schedule(Arc::new(s)))
        })? {
            Cached::Schedule(s) => Ok(s),
            Cached::Scalar(_) => unreachable!("sum key holds a schedule"),
        }
    }

    /// `δ*(α₁)` at `(R̃_j, 1)` for a dyadic `n`.
    pub fn delta_star(&self, n: usize, grid_index: u32, alpha1: f64) -> Result<f64> {
        let key = CacheKey { kind: CacheKind::DeltaStar, n, grid_index, alpha_bits: alpha1.to_bits() };
        match self.lookup(key, || {
            let model = Self::unit_model(grid_index)?;
            delta_star(n as u64, &model, alpha1, &self.cfg).map(Cached::Scalar)
        })? {
            Cached::Scalar(v) => Ok(v),
            Cached::Schedule(_) => unreachable!("delta-star key holds a scalar"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmpiricalKind {
    Bridge,
    Sum,
}

/// One emitted threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPoint {
    pub k: usize,
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    pub threshold: f64,
    /// Set when `σ̂_k^L = 0` and only the range-based bound applies.
    pub fallback: bool,
}

/// Streaming thresholds `σ̂_k^U·Δ_k(α(1−ρ), R̃_k, 1)` (or `𝒟_k` for sums).
pub struct EmpiricalThresholds<C: VarianceConfidenceSequence> {
    n: usize,
    alpha: f64,
    rho: f64,
    kind: EmpiricalKind,
    cs: C,
    cache: Arc<ScheduleCache>,
    fallback_unit: Vec<f64>,
    fallback_tail: Option<FallbackTail>,
    points: Vec<EmpiricalPoint>,
}

/// Linear part of the sum fallback, `(k/n)·δ*_trivial` with `δ*` depending on `σ̂^U`.
#[derive(Debug, Clone, Copy)]
struct FallbackTail {
    alpha1: f64,
}

impl<C: VarianceConfidenceSequence> EmpiricalThresholds<C> {
    /// `cs` must have been built with `δ ≤ ρ·α`.
    pub fn new(n: usize, alpha: f64, rho: f64, kind: EmpiricalKind, cs: C, cache: Arc<ScheduleCache>) -> Result<Self> {
        if n == 0 {
            return domain("n must be positive");
        }
        if !(alpha > 0.0 && alpha < 1.0) || !(rho > 0.0 && rho < 1.0) {
            return domain(format!("alpha and rho must lie in (0, 1), got {alpha} and {rho}"));
        }
        if cs.delta() > rho * alpha * (1.0 + 1e-12) {
            return Err(KmtError::Config(format!(
                "confidence sequence budget {} exceeds rho*alpha = {}",
                cs.delta(),
                rho * alpha
            )));
        }
        if kind == EmpiricalKind::Sum && !n.is_power_of_two() {
            return domain(format!("sum thresholds need n to be a power of two, got {n}"));
        }
        let level = alpha * (1.0 - rho);
        // The optimized split is unknown when σ is, so the sum fallback takes
        // the worst end of the searched split range for each part.
        let (fallback_unit, fallback_tail) = match kind {
            EmpiricalKind::Bridge => (trivial_unit_bridge(n, level, cache.bound_config())?, None),
            EmpiricalKind::Sum => {
                let split = cache.split_config();
                (
                    trivial_unit_bridge(n, split.min_fraction * level, cache.bound_config())?,
                    Some(FallbackTail { alpha1: (1.0 - split.max_fraction) * level }),
                )
            }
        };
        Ok(Self { n, alpha, rho, kind, cs, cache, fallback_unit, fallback_tail, points: Vec::new() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn points(&self) -> &[EmpiricalPoint] {
        &self.points
    }

    pub fn confidence_sequence(&self) -> &C {
        &self.cs
    }

    /// Consumes observation `k = points().len() + 1` and emits its threshold.
    pub fn push(&mut self, y: f64) -> Result<EmpiricalPoint> {
        let k = self.points.len() + 1;
        if k > self.n {
            return domain(format!("stream longer than n={}", self.n));
        }
        let iv = self.cs.observe(y)?;
        let r = self.cs.range();
        let fallback = self.fallback_value(k, r, iv.upper)?;
        let (threshold, used_fallback) = if iv.lower > 0.0 {
            let (j, _) = quantize_ratio(r / iv.lower)?;
            let level = self.alpha * (1.0 - self.rho);
            let schedule = match self.kind {
                EmpiricalKind::Bridge => self.cache.bridge(self.n, j, level)?,
                EmpiricalKind::Sum => self.cache.sum(self.n, j, level)?,
            };
            let scaled = iv.upper * schedule.values[k - 1];
            if scaled <= fallback {
                (scaled, false)
            } else {
                (fallback, true)
            }
        } else {
            (fallback, true)
        };
        let point =
            EmpiricalPoint { k, sigma_lower: iv.lower, sigma_upper: iv.upper, threshold, fallback: used_fallback };
        self.points.push(point);
        Ok(point)
    }

    fn fallback_value(&self, k: usize, r: f64, sigma_upper: f64) -> Result<f64> {
        let bridge = (sigma_upper + std::f64::consts::SQRT_2 * r) * self.fallback_unit[k - 1];
        Ok(match self.fallback_tail {
            None => bridge,
            Some(tail) => {
                let ds = trivial_delta_star(self.n as u64, r, sigma_upper, tail.alpha1, self.cache.bound_config())?;
                bridge + k as f64 / self.n as f64 * ds
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_interval_is_vacuous() {
        let mut cs = default_variance_cs(2.0, 0.05).unwrap();
        let iv = cs.observe(1.3).unwrap();
        assert_eq!((iv.k, iv.lower, iv.upper), (1, 0.0, 1.0));
    }

    #[test]
    fn constant_stream_has_zero_lower_bound() {
        let mut cs = default_variance_cs(1.0, 0.05).unwrap();
        for _ in 0..5000 {
            let iv = cs.observe(0.4).unwrap();
            assert_eq!(iv.lower, 0.0);
            assert!(iv.upper <= 0.5);
        }
        assert!(cs.intervals().last().unwrap().upper < 0.15);
    }

    #[test]
    fn intervals_are_nested() {
        let mut cs = default_variance_cs(1.0, 0.05).unwrap();
        let mut prev = (0.0, 0.5);
        for i in 0..4000 {
            let iv = cs.observe(if i % 2 == 0 { 0.0 } else { 1.0 }).unwrap();
            assert!(iv.lower >= prev.0 && iv.upper <= prev.1 && iv.lower <= iv.upper);
            prev = (iv.lower, iv.upper);
        }
        assert!(prev.0 > 0.3 && prev.1 >= 0.5 - 1e-12);
    }

    #[test]
    fn rejects_out_of_range_observations() {
        let mut cs = default_variance_cs(1.0, 0.05).unwrap();
        assert!(cs.observe(1.5).is_err());
        assert!(cs.observe(-0.1).is_err());
    }

    #[test]
    fn quantization_rounds_up() {
        assert_eq!(quantize_ratio(2.0).unwrap(), (0, 2.0));
        let (j, v) = quantize_ratio(2.2000001).unwrap();
        assert_eq!(j, 2);
        assert!(v >= 2.2000001 && v / 1.1 < 2.2000001);
        assert!(quantize_ratio(1.5).is_err());
        for x in [2.01, 3.7, 10.0, 123.4] {
            let (_, v) = quantize_ratio(x).unwrap();
            assert!(v >= x && v / RATIO_GRID_STEP < x);
        }
    }
}
