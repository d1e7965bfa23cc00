//! Dyadic threshold schedules for the bridge `W_k` and the partial sums `S_k`.
//!
//! A bridge schedule splits a failure budget across the `L = ⌈log₂ n⌉` dyadic
//! levels, bounds the midpoint deviation of each level by the conditional
//! Wasserstein bound, and unrolls the per-level midpoints into per-index
//! thresholds. A sum schedule adds a linear correction for `S_n` and optimizes
//! how the budget is shared between the two parts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, KmtError, Result};
use crate::special::normal_quantile;
use crate::wasserstein::{marginal_bound, omega_midpoint, BoundSearchConfig, BoundedModel};

/// Absolute tolerance of the `ν₀*` bisection.
const NU0_TOL: f64 = 1e-12;

/// Failure probabilities accumulated level by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSequence {
    pub nu0: f64,
    /// `β_0 ..= β_L`.
    pub betas: Vec<f64>,
}

impl BetaSequence {
    pub fn last(&self) -> f64 {
        *self.betas.last().expect("β_0 always present")
    }
}

/// Per-level budget multipliers `C_ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelWeights {
    /// `C_ℓ = base^ℓ`.
    Geometric(f64),
    /// `C_1, C_2, …` listed explicitly.
    Explicit(Vec<f64>),
}

impl LevelWeights {
    /// `C_ℓ` for `ℓ ≥ 1`.
    pub fn weight(&self, level: u32) -> Result<f64> {
        let w = match self {
            LevelWeights::Geometric(base) => base.powi(level as i32),
            LevelWeights::Explicit(ws) => match ws.get(level as usize - 1) {
                Some(&w) => w,
                None => {
                    return Err(KmtError::Config(format!("{} level weights given, level {level} requested", ws.len())))
                }
            },
        };
        if !(w.is_finite() && w > 0.0) {
            return Err(KmtError::Config(format!("level weight C_{level} = {w} must be positive")));
        }
        Ok(w)
    }
}

/// Level-weighted budgets plus the optional almost-sure midpoint bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub level_weights: LevelWeights,
    pub zeta_enabled: bool,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self { level_weights: LevelWeights::Geometric(1.5), zeta_enabled: true }
    }
}

impl VariantConfig {
    /// `C_ℓ ≡ 1` without the fallback; reproduces the plain schedule.
    pub fn plain() -> Self {
        Self { level_weights: LevelWeights::Geometric(1.0), zeta_enabled: false }
    }

    fn weights(&self, levels: u32) -> Result<Vec<f64>> {
        (1..=levels).map(|l| self.level_weights.weight(l)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `Δ_k`, thresholds for the bridge `W_k`.
    Bridge,
    /// `𝒟_k`, thresholds for the partial sums `S_k`.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMeta {
    pub nu0_star: f64,
    pub alpha0_star: Option<f64>,
    pub alpha1_star: Option<f64>,
    pub delta_star: Option<f64>,
    /// Midpoint threshold of each level `1..=L`.
    pub per_level_midpoints: Vec<f64>,
}

/// Per-index thresholds, `values[k-1]` holding the threshold of index `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub n: usize,
    pub levels: u32,
    pub alpha: f64,
    pub kind: ScheduleKind,
    pub meta: ScheduleMeta,
    pub values: Vec<f64>,
}

impl ThresholdSchedule {
    /// Threshold at the 1-based index `k`.
    pub fn value(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.values.get(i)).copied()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Search settings for the split `α = α₀ + α₁` of a sum schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSearchConfig {
    pub grid_points: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub golden_iterations: usize,
    pub variant: Option<VariantConfig>,
}

impl Default for SplitSearchConfig {
    fn default() -> Self {
        Self { grid_points: 64, min_fraction: 1e-3, max_fraction: 0.999, golden_iterations: 40, variant: None }
    }
}

impl SplitSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(KmtError::Config("split grid needs at least 2 points".into()));
        }
        if !(0.0 < self.min_fraction && self.min_fraction < self.max_fraction && self.max_fraction < 1.0) {
            return Err(KmtError::Config(format!(
                "split fractions must satisfy 0 < min < max < 1, got {} and {}",
                self.min_fraction, self.max_fraction
            )));
        }
        Ok(())
    }
}

/// `⌈log₂ n⌉`.
pub fn levels_for(n: usize) -> u32 {
    n.max(1).next_power_of_two().trailing_zeros()
}

/// `β_0 = 0`, `β_ℓ = 2β_{ℓ−1} − β²_{ℓ−1} + ν₀`.
pub fn beta_sequence(nu0: f64, levels: u32) -> Result<BetaSequence> {
    beta_sequence_weighted(nu0, &vec![1.0; levels as usize])
}

/// `β_ℓ = 2β_{ℓ−1} − β²_{ℓ−1} + C_ℓ·ν₀`, one weight per level.
pub fn beta_sequence_weighted(nu0: f64, weights: &[f64]) -> Result<BetaSequence> {
    if !(0.0..=1.0).contains(&nu0) {
        return domain(format!("nu0 must lie in [0, 1], got {nu0}"));
    }
    let mut betas = Vec::with_capacity(weights.len() + 1);
    betas.push(0.0);
    let mut b = 0.0f64;
    for &c in weights {
        b = 2.0 * b - b * b + c * nu0;
        betas.push(b);
    }
    Ok(BetaSequence { nu0, betas })
}

/// Largest `ν₀` with `β_L(ν₀) ≤ α`.
pub fn find_nu0_star(alpha: f64, levels: u32) -> Result<f64> {
    find_nu0_star_weighted(alpha, &vec![1.0; levels as usize])
}

/// Weighted version of [`find_nu0_star`]. Intermediate `β_ℓ > 1` counts as
/// infeasible, which keeps the predicate monotone in `ν₀`.
pub fn find_nu0_star_weighted(alpha: f64, weights: &[f64]) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if weights.is_empty() {
        return Ok(1.0);
    }
    let feasible = |nu0: f64| {
        let mut b = 0.0f64;
        for &c in weights {
            b = 2.0 * b - b * b + c * nu0;
            if b > 1.0 {
                return false;
            }
        }
        b <= alpha
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if feasible(hi) {
        return Ok(hi);
    }
    while hi - lo > NU0_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Almost-sure plus Gaussian-tail bound on `|W_{h} − Z̃_{h}|` at the midpoint
/// `h` of a block of size `2h`, exceeded with probability at most `budget`.
pub fn zeta_fallback(half_n: u64, model: &BoundedModel, budget: f64) -> Result<f64> {
    if !(budget > 0.0 && budget < 1.0) {
        return domain(format!("budget must lie in (0, 1), got {budget}"));
    }
    if half_n == 0 {
        return domain("half_n must be positive");
    }
    let z = normal_quantile(1.0 - 0.5 * budget).max(0.0);
    let sd = model.sigma * ((2 * half_n) as f64).sqrt() / 2.0;
    Ok(half_n as f64 * model.r_s() + sd * z)
}

/// `ω_p(2^M, σ)` for every level and every `p` of the grid.
#[derive(Debug, Clone)]
struct MidpointTable {
    levels: Vec<Vec<(u32, f64)>>,
}

impl MidpointTable {
    fn build(levels: u32, model: &BoundedModel, cfg: &BoundSearchConfig) -> Result<Self> {
        let levels =
            (1..=levels).into_par_iter().map(|m| omega_midpoint(1u64 << m, model, cfg)).collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    /// Midpoint thresholds for per-level budgets `weights[M-1]·ν₀`.
    fn midpoints(&self, nu0: f64, weights: &[f64], zeta: bool, model: &BoundedModel) -> Result<Vec<f64>> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let budget = weights[i] * nu0;
                let mut best = row.iter().map(|&(p, w)| w / budget.powf(1.0 / p as f64)).fold(f64::INFINITY, f64::min);
                if zeta {
                    best = best.min(zeta_fallback(1u64 << i, model, budget)?);
                }
                if !best.is_finite() {
                    return Err(KmtError::BudgetInfeasible(format!("no finite midpoint threshold at level {}", i + 1)));
                }
                Ok(best)
            })
            .collect()
    }
}

/// Unrolls per-level midpoints into `δ^L_1, …, δ^L_{2^L}`, using
/// `δ^ℓ_{2^ℓ} = 0` at every level.
pub fn unroll_midpoints(midpoints: &[f64]) -> Vec<f64> {
    let mut values = vec![0.0; 1usize << midpoints.len()];
    for (i, &d) in midpoints.iter().enumerate() {
        let half = 1usize << i;
        let size = half << 1;
        let scale = d / half as f64;
        // The upper half mirrors the previous level, so fill it before the
        // lower half is updated in place.
        for k in half + 1..size {
            values[k - 1] = values[size - k - 1] + (size - k) as f64 * scale;
        }
        values[size - 1] = 0.0;
        for k in 1..=half {
            values[k - 1] += k as f64 * scale;
        }
    }
    values
}

struct BridgeParts {
    nu0: f64,
    midpoints: Vec<f64>,
    values: Vec<f64>,
}

fn bridge_parts(
    table: &MidpointTable,
    levels: u32,
    alpha: f64,
    variant: &VariantConfig,
    model: &BoundedModel,
) -> Result<BridgeParts> {
    let weights = variant.weights(levels)?;
    let nu0 = find_nu0_star_weighted(alpha, &weights)?;
    if nu0 <= 0.0 {
        return Err(KmtError::BudgetInfeasible(format!("alpha={alpha} leaves no budget across {levels} levels")));
    }
    let midpoints = table.midpoints(nu0, &weights, variant.zeta_enabled, model)?;
    let values = unroll_midpoints(&midpoints);
    Ok(BridgeParts { nu0, midpoints, values })
}

/// `Δ_k(α)` for `k = 1..=n`. Non-dyadic `n` is built at `2^L` and truncated.
pub fn build_bridge_schedule(
    n: usize,
    model: &BoundedModel,
    alpha: f64,
    cfg: &BoundSearchConfig,
    variant: Option<&VariantConfig>,
) -> Result<ThresholdSchedule> {
    if n == 0 {
        return domain("n must be positive");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    cfg.validate()?;
    let levels = levels_for(n);
    let table = MidpointTable::build(levels, model, cfg)?;
    let plain = VariantConfig::plain();
    let parts = bridge_parts(&table, levels, alpha, variant.unwrap_or(&plain), model)?;
    let mut values = parts.values;
    values.truncate(n);
    Ok(ThresholdSchedule {
        n,
        levels,
        alpha,
        kind: ScheduleKind::Bridge,
        meta: ScheduleMeta {
            nu0_star: parts.nu0,
            alpha0_star: None,
            alpha1_star: None,
            delta_star: None,
            per_level_midpoints: parts.midpoints,
        },
        values,
    })
}

/// `min_p s_p(n, σ) / α₁^{1/p}`, the threshold for `|S_n − Z_n|`.
pub fn delta_star(n: u64, model: &BoundedModel, alpha1: f64, cfg: &BoundSearchConfig) -> Result<f64> {
    if !(alpha1 > 0.0 && alpha1 < 1.0) {
        return domain(format!("alpha1 must lie in (0, 1), got {alpha1}"));
    }
    let bounds = cfg
        .p_grid
        .par_iter()
        .map(|&p| marginal_bound(n, p, model, cfg).map(|s| s / alpha1.powf(1.0 / p as f64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(bounds.into_iter().fold(f64::INFINITY, f64::min))
}

struct SplitEval {
    alpha0: f64,
    objective: f64,
    bridge: BridgeParts,
    delta_star: f64,
}

/// `𝒟_k(α) = Δ_k(α₀*) + (k/n)·δ*(α − α₀*)` with the split minimizing `max_k 𝒟_k`.
pub fn build_sum_schedule(
    n: usize,
    model: &BoundedModel,
    alpha: f64,
    cfg: &BoundSearchConfig,
    split: &SplitSearchConfig,
) -> Result<ThresholdSchedule> {
    if n == 0 || !n.is_power_of_two() {
        return domain(format!("sum schedules need n to be a power of two, got {n}"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    cfg.validate()?;
    split.validate()?;
    let levels = levels_for(n);
    let table = MidpointTable::build(levels, model, cfg)?;
    let plain = VariantConfig::plain();
    let variant = split.variant.as_ref().unwrap_or(&plain);

    let eval = |alpha0: f64| -> Result<SplitEval> {
        let bridge = bridge_parts(&table, levels, alpha0, variant, model)?;
        let ds = delta_star(n as u64, model, alpha - alpha0, cfg)?;
        let objective =
            bridge.values.iter().enumerate().map(|(i, d)| d + (i + 1) as f64 / n as f64 * ds).fold(0.0, f64::max);
        Ok(SplitEval { alpha0, objective, bridge, delta_star: ds })
    };

    let (lo, hi) = (split.min_fraction.ln(), split.max_fraction.ln());
    let steps = split.grid_points - 1;
    let mut fractions: Vec<f64> = (0..=steps).map(|i| (lo + (hi - lo) * i as f64 / steps as f64).exp()).collect();
    fractions.push(0.5);
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();

    let grid = fractions.par_iter().map(|&f| eval(f * alpha).map(|e| (f, e.objective))).collect::<Result<Vec<_>>>()?;
    let mut best_idx = 0;
    for (i, &(_, obj)) in grid.iter().enumerate() {
        if obj <= grid[best_idx].1 {
            best_idx = i;
        }
    }
    let mut best_fraction = grid[best_idx].0;
    let mut best_obj = grid[best_idx].1;

    // Golden-section refinement between the neighbours of the grid argmin.
    let mut a = grid[best_idx.saturating_sub(1)].0.ln();
    let mut b = grid[(best_idx + 1).min(grid.len() - 1)].0.ln();
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let objective = |x: f64| eval(x.exp() * alpha).map(|e| e.objective);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    for _ in 0..split.golden_iterations {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = objective(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = objective(x2)?;
        }
    }
    for (x, f) in [(x1, f1), (x2, f2)] {
        if f < best_obj {
            best_obj = f;
            best_fraction = x.exp();
        }
    }

    let SplitEval { alpha0, bridge, delta_star, .. } = eval(best_fraction * alpha)?;
    let values = bridge.values.iter().enumerate().map(|(i, d)| d + (i + 1) as f64 / n as f64 * delta_star).collect();
    Ok(ThresholdSchedule {
        n,
        levels,
        alpha,
        kind: ScheduleKind::Sum,
        meta: ScheduleMeta {
            nu0_star: bridge.nu0,
            alpha0_star: Some(alpha0),
            alpha1_star: Some(alpha - alpha0),
            delta_star: Some(delta_star),
            per_level_midpoints: bridge.midpoints,
        },
        values,
    })
}

/// Sum schedule at a fixed split `α₀`, without optimizing.
pub fn build_sum_schedule_fixed(
    n: usize,
    model: &BoundedModel,
    alpha: f64,
    alpha0: f64,
    cfg: &BoundSearchConfig,
) -> Result<ThresholdSchedule> {
    if n == 0 || !n.is_power_of_two() {
        return domain(format!("sum schedules need n to be a power of two, got {n}"));
    }
    if !(0.0 < alpha0 && alpha0 < alpha && alpha < 1.0) {
        return domain(format!("need 0 < alpha0 < alpha < 1, got {alpha0} and {alpha}"));
    }
    let bridge = build_bridge_schedule(n, model, alpha0, cfg, None)?;
    let ds = delta_star(n as u64, model, alpha - alpha0, cfg)?;
    let values = bridge.values.iter().enumerate().map(|(i, d)| d + (i + 1) as f64 / n as f64 * ds).collect();
    Ok(ThresholdSchedule {
        kind: ScheduleKind::Sum,
        alpha,
        meta: ScheduleMeta {
            alpha0_star: Some(alpha0),
            alpha1_star: Some(alpha - alpha0),
            delta_star: Some(ds),
            ..bridge.meta
        },
        values,
        ..bridge
    })
}

/// Unit trivial-branch bridge schedule `u_k`: for every `σ ≤ s`,
/// `Δ_k(α, R, σ) ≤ (s + √2·R)·u_k`. Used when no positive lower bound on `σ`
/// is available.
pub fn trivial_unit_bridge(n: usize, alpha: f64, cfg: &BoundSearchConfig) -> Result<Vec<f64>> {
    if n == 0 {
        return domain("n must be positive");
    }
    cfg.validate()?;
    let levels = levels_for(n);
    let nu0 = find_nu0_star(alpha, levels)?;
    if nu0 <= 0.0 {
        return Err(KmtError::BudgetInfeasible(format!("alpha={alpha} leaves no budget across {levels} levels")));
    }
    let midpoints: Vec<f64> = (1..=levels)
        .map(|m| {
            let half_sd = ((1u64 << m) as f64).sqrt() / 2.0;
            cfg.p_grid
                .iter()
                .map(|&p| ((p as f64) - 1.0).sqrt() * half_sd / nu0.powf(1.0 / p as f64))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut values = unroll_midpoints(&midpoints);
    values.truncate(n);
    Ok(values)
}

/// `min_p √(p−1)·√n·(R + s) / α₁^{1/p}`, dominating `δ*(α₁)` for every `σ ≤ s`.
pub fn trivial_delta_star(n: u64, r: f64, sigma_upper: f64, alpha1: f64, cfg: &BoundSearchConfig) -> Result<f64> {
    if !(alpha1 > 0.0 && alpha1 < 1.0) {
        return domain(format!("alpha1 must lie in (0, 1), got {alpha1}"));
    }
    Ok(cfg
        .p_grid
        .iter()
        .map(|&p| ((p as f64) - 1.0).sqrt() * (n as f64).sqrt() * (r + sigma_upper) / alpha1.powf(1.0 / p as f64))
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_examples() {
        let b = beta_sequence(0.01, 2).unwrap();
        assert_eq!(b.betas[0], 0.0);
        assert!((b.betas[1] - 0.01).abs() < 1e-15);
        assert!((b.betas[2] - 0.0299).abs() < 1e-15);
        assert!(beta_sequence(0.0, 7).unwrap().betas.iter().all(|&x| x == 0.0));
        assert_eq!(beta_sequence(1.0, 1).unwrap().betas[1], 1.0);
        assert!(beta_sequence(1.5, 1).is_err());
    }

    #[test]
    fn nu0_star_examples() {
        assert!((find_nu0_star(0.05, 1).unwrap() - 0.05).abs() < 1e-9);
        let closed = (3.0 - 8.8f64.sqrt()) / 2.0;
        assert!((find_nu0_star(0.05, 2).unwrap() - closed).abs() < 1e-9);
        let v = find_nu0_star(0.05, 10).unwrap();
        let top = beta_sequence(v, 10).unwrap().last();
        assert!(top <= 0.05 && top >= 0.05 - 1e-9);
        assert!(beta_sequence(v + 1e-10, 10).unwrap().last() > 0.05);
        assert!(find_nu0_star(0.0, 3).is_err());
        assert!(find_nu0_star(1.0, 3).is_err());
    }

    #[test]
    fn unroll_two_levels() {
        let v = unroll_midpoints(&[3.0, 5.0]);
        assert_eq!(v, vec![3.0 + 2.5, 5.0, 3.0 + 2.5, 0.0]);
        assert_eq!(unroll_midpoints(&[]), vec![0.0]);
    }

    #[test]
    fn unrolled_levels_are_symmetric() {
        let v = unroll_midpoints(&[1.0, 2.5, 0.7, 4.0, 1.1]);
        let n = v.len();
        for k in 1..n {
            assert_eq!(v[k - 1], v[n - k - 1]);
        }
    }

    #[test]
    fn zeta_examples() {
        let m = BoundedModel::new(1.0, 0.25).unwrap();
        let z = zeta_fallback(8, &m, 0.5).unwrap();
        let expected = 8.0 * m.r_s() + 0.25 * 4.0 / 2.0 * normal_quantile(0.75);
        assert!((z - expected).abs() < 1e-12);
        assert!(zeta_fallback(8, &m, 0.999_999).unwrap() >= 8.0 * m.r_s());
        assert!(zeta_fallback(8, &m, 1.0).is_err());
    }

    #[test]
    fn levels_for_small_n() {
        assert_eq!(levels_for(1), 0);
        assert_eq!(levels_for(2), 1);
        assert_eq!(levels_for(5), 3);
        assert_eq!(levels_for(1024), 10);
    }
}
