//! Ground-truth machinery for small instances.
//!
//! Brute-force Wasserstein distances between exactly enumerated laws and a
//! Gaussian, the randomized probability integral transform, and the recursive
//! dyadic coupling of a binary i.i.d. sequence with a Gaussian random walk.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::error::{domain, KmtError, Result};
use crate::scheduler::{build_bridge_schedule, build_sum_schedule, SplitSearchConfig};
use crate::special::{integrate, normal_quantile, QuadratureConfig};
use crate::wasserstein::{omega_conditional, BoundSearchConfig, BoundedModel};

/// Quantiles are kept this far away from 0 and 1.
pub const PIT_CLAMP: f64 = 1e-15;
/// Half-width of the Gaussian window used by the quantile quadrature.
const Z_WINDOW: f64 = 40.0;

// ---------------------------------------------------------------------------
// Finite distributions
// ---------------------------------------------------------------------------

/// A law with finitely many atoms, sorted by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl FiniteDistribution {
    /// Atoms must have strictly increasing values and probabilities summing to one.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return domain("distribution needs at least one atom");
        }
        if atoms.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return domain("atom values must be strictly increasing");
        }
        if atoms.iter().any(|&(_, q)| !(0.0..=1.0).contains(&q)) {
            return domain("atom probabilities must lie in [0,1]");
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return domain(format!("probabilities sum to {total}, not 1"));
        }
        Ok(Self { atoms })
    }

    /// Builds a law from unsorted weighted points, merging values closer than `tol`.
    pub fn from_weighted(points: impl IntoIterator<Item = (f64, f64)>, tol: f64) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = points.into_iter().collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for (v, q) in pts {
            match atoms.last_mut() {
                Some(last) if (v - last.0).abs() <= tol => last.1 += q,
                _ => atoms.push((v, q)),
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        for a in &mut atoms {
            a.1 /= total;
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, q)| v * q).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms.iter().map(|&(v, q)| q * (v - m) * (v - m)).sum()
    }

    fn locate(&self, x: f64) -> Option<usize> {
        let tol = 1e-12 * (1.0 + x.abs());
        self.atoms.iter().position(|&(v, _)| (v - x).abs() <= tol)
    }

    /// `(F(x⁻), p(x))` for an atom `x`.
    pub fn split_at(&self, x: f64) -> Result<(f64, f64)> {
        let idx = self.locate(x).ok_or_else(|| KmtError::Domain(format!("{x} is not an atom")))?;
        let before: f64 = self.atoms[..idx].iter().map(|a| a.1).sum();
        Ok((before, self.atoms[idx].1))
    }
}

// ---------------------------------------------------------------------------
// Randomized probability integral transform
// ---------------------------------------------------------------------------

/// Output of [`randomized_pit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitOutput {
    pub value: f64,
    /// True when the uniform level had to be pulled away from 0 or 1.
    pub clamped: bool,
}

fn pit_level(before: f64, mass: f64, u: f64, sigma: f64) -> PitOutput {
    let level = before + u * mass;
    let clamped_level = level.clamp(PIT_CLAMP, 1.0 - PIT_CLAMP);
    PitOutput { value: sigma * normal_quantile(clamped_level), clamped: clamped_level != level }
}

/// `σ·Φ⁻¹(F(x⁻) + u·p(x))`; exactly `N(0, σ²)` when `x` is drawn from `dist`
/// and `u` is an independent uniform.
pub fn randomized_pit(dist: &FiniteDistribution, x: f64, u: f64, target_sigma: f64) -> Result<PitOutput> {
    if !(0.0..=1.0).contains(&u) {
        return domain(format!("u must lie in [0,1], got {u}"));
    }
    let (before, mass) = dist.split_at(x)?;
    Ok(pit_level(before, mass, u, target_sigma))
}

// ---------------------------------------------------------------------------
// Quantile-coupling Wasserstein distances
// ---------------------------------------------------------------------------

fn quad_cfg() -> QuadratureConfig {
    QuadratureConfig { rel_tol: 1e-12, abs_tol: 1e-15, max_subdivisions: 1 << 14 }
}

/// `W_p(law, N(0, s²))` by integrating the monotone coupling atom by atom in
/// Gaussian coordinates, splitting at each kink `z = w/s`.
pub fn wp_to_gaussian(law: &FiniteDistribution, s: f64, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return domain(format!("p must be >= 1, got {p}"));
    }
    if s == 0.0 {
        let m: f64 = law.atoms().iter().map(|&(v, q)| q * v.abs().powf(p)).sum();
        return Ok(m.powf(1.0 / p));
    }
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    let mut cum = 0.0;
    for &(w, q) in law.atoms() {
        let lo_level = cum;
        cum += q;
        let lo = if lo_level <= 0.0 { -Z_WINDOW } else { normal_quantile(lo_level).max(-Z_WINDOW) };
        let hi = if cum >= 1.0 - 1e-15 { Z_WINDOW } else { normal_quantile(cum).min(Z_WINDOW) };
        if !(hi > lo) {
            continue;
        }
        let f = |z: f64| (w - s * z).abs().powf(p) * phi(z);
        let kink = w / s;
        if kink > lo && kink < hi {
            total += integrate(f, lo, kink, false, &quad_cfg())?;
            total += integrate(f, kink, hi, false, &quad_cfg())?;
        } else {
            total += integrate(f, lo, hi, false, &quad_cfg())?;
        }
    }
    Ok(total.powf(1.0 / p))
}

/// Law of `W_k = S_k − (k/n)S_n` when `S_k` sums a uniformly random `k`-subset.
pub fn conditional_bridge_law(multiset: &[f64], k: usize) -> Result<FiniteDistribution> {
    let n = multiset.len();
    if n > 12 {
        return Err(KmtError::TooLarge(format!("n={n} > 12 subsets")));
    }
    if k == 0 || k >= n {
        return domain(format!("k must lie in [1, n-1], got k={k}, n={n}"));
    }
    let total: f64 = multiset.iter().sum();
    let shift = k as f64 / n as f64 * total;
    let mut points = Vec::new();
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize == k {
            let sk: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| multiset[i]).sum();
            points.push((sk - shift, 1.0));
        }
    }
    let scale = multiset.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * scale * n as f64;
    for pt in &mut points {
        if pt.0.abs() <= tol {
            pt.0 = 0.0;
        }
    }
    FiniteDistribution::from_weighted(points, tol)
}

/// Conditional `W_p` between `W_k` and `N(0, σ²k(n−k)/n)`, where `σ²` is the
/// population variance of the multiset.
pub fn brute_force_conditional_wp(multiset: &[f64], k: usize, p: f64) -> Result<f64> {
    let n = multiset.len() as f64;
    let mean = multiset.iter().sum::<f64>() / n;
    let var = multiset.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = multiset.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let var = if var <= (1e-12 * scale).powi(2) { 0.0 } else { var };
    brute_force_conditional_wp_with_sigma(multiset, k, p, var.sqrt())
}

/// As [`brute_force_conditional_wp`] with an externally supplied `σ`.
pub fn brute_force_conditional_wp_with_sigma(multiset: &[f64], k: usize, p: f64, sigma: f64) -> Result<f64> {
    let law = conditional_bridge_law(multiset, k)?;
    let n = multiset.len() as f64;
    let s = sigma * (k as f64 * (n - k as f64) / n).sqrt();
    wp_to_gaussian(&law, s, p)
}

/// `W_p(S_n − nμ, N(0, nσ²))` for `n` i.i.d. draws from `dist`.
pub fn brute_force_marginal_wp(dist: &FiniteDistribution, n: usize, p: f64) -> Result<f64> {
    if n == 0 || n > 20 {
        return Err(KmtError::TooLarge(format!("n={n} outside 1..=20")));
    }
    let mu = dist.mean();
    let scale = dist.atoms().iter().fold(1.0f64, |a, v| a.max(v.0.abs()));
    let tol = 1e-9 * scale;
    let mut law: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    law.insert(0, (0.0, 1.0));
    for _ in 0..n {
        let mut next: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        for &(v, q) in law.values() {
            for &(a, qa) in dist.atoms() {
                let x = v + a - mu;
                let key = (x / tol).round() as i64;
                let e = next.entry(key).or_insert((x, 0.0));
                e.1 += q * qa;
            }
        }
        if next.len() > 1_000_000 {
            return Err(KmtError::TooLarge("support exceeds 10^6 points".into()));
        }
        law = next;
    }
    let law = FiniteDistribution::from_weighted(law.into_values(), tol * n as f64)?;
    wp_to_gaussian(&law, (n as f64 * dist.variance()).sqrt(), p)
}

// ---------------------------------------------------------------------------
// Dyadic coupling for binary alphabets
// ---------------------------------------------------------------------------

/// One run of the dyadic coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub n: usize,
    pub seed: u64,
    /// Raw observations `Y_1..Y_n` in `{0, R}`.
    pub y: Vec<f64>,
    /// Centered partial sums `S_0..S_n`.
    pub s: Vec<f64>,
    /// Gaussian walk `Z_0..Z_n`.
    pub z: Vec<f64>,
    /// Bridge `W_k = S_k − (k/n)S_n`.
    pub w: Vec<f64>,
    /// Gaussian bridge `Z̃_k = Z_k − (k/n)Z_n`.
    pub z_tilde: Vec<f64>,
    /// Uniforms consumed by the transforms, top level first.
    pub uniforms: Vec<f64>,
    /// Number of transforms whose level was clamped.
    pub clamped: usize,
}

fn ln_hypergeom(m: u64, h: u64, j: u64) -> f64 {
    let half = m / 2;
    ln_binomial(h, j) + ln_binomial(m - h, half - j) - ln_binomial(m, half)
}

/// `(P(J < j), P(J = j))` for the number of successes among the first half of
/// a block of length `m` holding `h` successes.
fn hypergeom_split(m: u64, h: u64, j: u64) -> (f64, f64) {
    let half = m / 2;
    let lo = h.saturating_sub(m - half);
    let before: f64 = (lo..j).map(|i| ln_hypergeom(m, h, i).exp()).sum();
    (before, ln_hypergeom(m, h, j).exp())
}

fn binomial_split(n: u64, q: f64, h: u64) -> (f64, f64) {
    let lp = |j: u64| ln_binomial(n, j) + j as f64 * q.ln() + (n - j) as f64 * (-q).ln_1p();
    let before: f64 = (0..h).map(|j| lp(j).exp()).sum();
    (before, lp(h).exp())
}

/// Couples `n = 2^L` draws of `R·Bernoulli(q)` with a Gaussian walk of step
/// variance `σ² = R²q(1−q)`, refining dyadically from the total sum down.
pub fn binary_dyadic_coupling(n: usize, success_prob: f64, r: f64, seed: u64) -> Result<CouplingTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    binary_dyadic_coupling_with(n, success_prob, r, seed, &mut rng)
}

/// As [`binary_dyadic_coupling`] drawing from a caller-provided generator.
pub fn binary_dyadic_coupling_with<G: Rng>(n: usize, q: f64, r: f64, seed: u64, rng: &mut G) -> Result<CouplingTrace> {
    if n == 0 || !n.is_power_of_two() {
        return domain(format!("n must be a power of two, got {n}"));
    }
    if !(q > 0.0 && q < 1.0) || !(r > 0.0) {
        return domain(format!("need 0 < q < 1 and R > 0, got q={q}, R={r}"));
    }
    let sigma = r * (q * (1.0 - q)).sqrt();
    let y: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < q { r } else { 0.0 }).collect();
    let mut counts = vec![0u64; n + 1];
    for i in 0..n {
        counts[i + 1] = counts[i] + u64::from(y[i] > 0.0);
    }
    let s: Vec<f64> = (0..=n).map(|k| r * (counts[k] as f64 - q * k as f64)).collect();

    let mut z = vec![0.0; n + 1];
    let mut uniforms = Vec::with_capacity(n);
    let mut clamped = 0usize;

    let u: f64 = rng.random();
    uniforms.push(u);
    let (before, mass) = binomial_split(n as u64, q, counts[n]);
    let top = pit_level(before, mass, u, (n as f64).sqrt() * sigma);
    clamped += usize::from(top.clamped);
    z[n] = top.value;

    let mut m = n;
    while m >= 2 {
        for a in (0..n).step_by(m) {
            let h = counts[a + m] - counts[a];
            let h1 = counts[a + m / 2] - counts[a];
            let u: f64 = rng.random();
            uniforms.push(u);
            let (before, mass) = hypergeom_split(m as u64, h, h1);
            let out = pit_level(before, mass, u, (m as f64).sqrt() * sigma / 2.0);
            clamped += usize::from(out.clamped);
            z[a + m / 2] = 0.5 * (z[a] + z[a + m]) + out.value;
        }
        m /= 2;
    }

    let nf = n as f64;
    let w = (0..=n).map(|k| s[k] - k as f64 / nf * s[n]).collect();
    let z_tilde = (0..=n).map(|k| z[k] - k as f64 / nf * z[n]).collect();
    Ok(CouplingTrace { n, seed, y, s, z, w, z_tilde, uniforms, clamped })
}

// ---------------------------------------------------------------------------
// Validation reports
// ---------------------------------------------------------------------------

/// Exceedance frequencies of bridge and sum schedules under the dyadic coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub success_prob: f64,
    pub r: f64,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    pub bridge_exceedance_rate: f64,
    pub sum_exceedance_rate: f64,
    /// Larger of the two rates.
    pub exceedance_rate: f64,
    /// `3·√(α/trials)`.
    pub slack: f64,
    pub pass: bool,
}

/// Runs `trials` dyadic couplings, trial `i` on stream `i` of `seed`, and
/// counts paths leaving either schedule.
pub fn coverage_experiment(
    n: usize,
    success_prob: f64,
    r: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
    cfg: &BoundSearchConfig,
) -> Result<CoverageReport> {
    if trials == 0 {
        return domain("trials must be positive");
    }
    if !(success_prob > 0.0 && success_prob < 1.0) {
        return domain(format!("success probability must lie in (0, 1), got {success_prob}"));
    }
    let model = BoundedModel::new(r, r * (success_prob * (1.0 - success_prob)).sqrt())?;
    let bridge = build_bridge_schedule(n, &model, alpha, cfg, None)?;
    let sum = build_sum_schedule(n, &model, alpha, cfg, &SplitSearchConfig::default())?;
    let hits = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let tr = binary_dyadic_coupling_with(n, success_prob, r, seed, &mut rng)?;
            let b = (1..=n).any(|k| (tr.w[k] - tr.z_tilde[k]).abs() > bridge.values[k - 1]);
            let s = (1..=n).any(|k| (tr.s[k] - tr.z[k]).abs() > sum.values[k - 1]);
            Ok((usize::from(b), usize::from(s)))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let m = trials as f64;
    let (bridge_rate, sum_rate) = (hits.0 as f64 / m, hits.1 as f64 / m);
    let slack = 3.0 * (alpha / m).sqrt();
    let worst = bridge_rate.max(sum_rate);
    Ok(CoverageReport {
        n,
        success_prob,
        r,
        alpha,
        trials,
        seed,
        bridge_exceedance_rate: bridge_rate,
        sum_exceedance_rate: sum_rate,
        exceedance_rate: worst,
        slack,
        pass: worst <= alpha + slack,
    })
}

/// Oracle against bound for one `(k, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceEntry {
    pub k: usize,
    pub p: u32,
    /// `L_p` average of conditional distances over the multiset law.
    pub oracle: f64,
    pub bound: f64,
    /// Largest oracle/bound ratio over single multisets, each with its own `σ`.
    pub worst_pointwise_ratio: f64,
    pub pointwise_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub alphabet: Vec<f64>,
    pub probs: Vec<f64>,
    pub n: usize,
    pub r: f64,
    pub entries: Vec<DominanceEntry>,
    pub pass: bool,
}

/// Compares brute-force conditional distances of all size-`n` multisets over
/// `alphabet` with the computable conditional bound. Distances are shift
/// invariant, so an alphabet with negative values is moved to start at 0.
pub fn dominance_report(
    alphabet: &[f64],
    probs: &[f64],
    n: usize,
    ks: &[usize],
    ps: &[u32],
    r: f64,
    cfg: &BoundSearchConfig,
) -> Result<DominanceReport> {
    if alphabet.is_empty() || alphabet.len() != probs.len() {
        return domain("alphabet needs one probability per value");
    }
    let lo = alphabet.iter().copied().fold(0.0, f64::min);
    let alphabet: Vec<f64> = alphabet.iter().map(|a| a - lo).collect();
    if alphabet.iter().any(|&a| !(0.0..=r).contains(&a)) {
        return domain(format!("alphabet range exceeds R={r}"));
    }
    let law = FiniteDistribution::new(alphabet.iter().copied().zip(probs.iter().copied()).collect())?;
    if n < 2 || n > 12 {
        return Err(KmtError::TooLarge(format!("n={n} outside 2..=12")));
    }
    if ks.iter().any(|&k| k == 0 || k >= n) {
        return domain("every k must lie in 1..n");
    }
    let law_model = BoundedModel::new(r, law.variance().sqrt())?;
    let multisets = multisets_with_probs(&alphabet, probs, n);
    let mut entries = Vec::new();
    for &k in ks {
        for &p in ps {
            let bound = omega_conditional(n as u64, k as u64, p, &law_model, cfg)?.value;
            let mut moment = 0.0;
            let (mut worst, mut violations) = (0.0f64, 0usize);
            for (values, prob) in &multisets {
                let d = brute_force_conditional_wp(values, k, p as f64)?;
                moment += prob * d.powi(p as i32);
                let m = values.iter().sum::<f64>() / n as f64;
                let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                if sd < 1e-12 * r {
                    violations += usize::from(d > 1e-12 * r);
                    continue;
                }
                let own = BoundedModel::new(r, sd.min(r / 2.0))?;
                let b = omega_conditional(n as u64, k as u64, p, &own, cfg)?.value;
                worst = worst.max(d / b);
                violations += usize::from(d > b);
            }
            entries.push(DominanceEntry {
                k,
                p,
                oracle: moment.powf(1.0 / p as f64),
                bound,
                worst_pointwise_ratio: worst,
                pointwise_violations: violations,
            });
        }
    }
    let pass = entries.iter().all(|e| e.oracle <= e.bound && e.pointwise_violations == 0);
    Ok(DominanceReport { alphabet, probs: probs.to_vec(), n, r, entries, pass })
}

/// Every size-`n` multiset over `alphabet` with its multinomial probability.
fn multisets_with_probs(alphabet: &[f64], probs: &[f64], n: usize) -> Vec<(Vec<f64>, f64)> {
    fn counts(n: usize, slots: usize) -> Vec<Vec<usize>> {
        if slots == 1 {
            return vec![vec![n]];
        }
        (0..=n)
            .flat_map(|c| {
                counts(n - c, slots - 1).into_iter().map(move |mut rest| {
                    rest.insert(0, c);
                    rest
                })
            })
            .collect()
    }
    counts(n, alphabet.len())
        .into_iter()
        .map(|c| {
            let values: Vec<f64> = c.iter().zip(alphabet).flat_map(|(&m, &a)| std::iter::repeat_n(a, m)).collect();
            let ln_p = ln_factorial(n as u64)
                + c.iter().zip(probs).map(|(&m, q)| m as f64 * q.ln() - ln_factorial(m as u64)).sum::<f64>();
            (values, ln_p.exp())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pit_boundaries() {
        let d = FiniteDistribution::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(randomized_pit(&d, -1.0, 1.0, 2.0).unwrap().value, 0.0);
        assert_eq!(randomized_pit(&d, 1.0, 0.0, 2.0).unwrap().value, 0.0);
        let low = randomized_pit(&d, -1.0, 0.0, 1.0).unwrap();
        assert!(low.clamped && low.value.is_finite());
        assert!(randomized_pit(&d, 0.5, 0.3, 1.0).is_err());
    }

    #[test]
    fn two_point_conditional_closed_form() {
        let v = brute_force_conditional_wp(&[-1.0, 1.0], 1, 2.0).unwrap();
        let exact = (1.5 - 2.0 * 0.5f64.sqrt() * 2.0 / (2.0 * std::f64::consts::PI).sqrt()).sqrt();
        assert!((v - exact).abs() < 1e-6, "{v} vs {exact}");
        assert!((exact - 0.6096).abs() < 1e-4);
    }

    #[test]
    fn degenerate_multiset_is_zero() {
        assert_eq!(brute_force_conditional_wp(&[0.7; 5], 2, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_multiset_k_and_n_minus_k() {
        let ms = [0.0, 0.0, 1.0, 2.0, 2.0, 1.0];
        for k in 1..6 {
            let a = brute_force_conditional_wp(&ms, k, 3.0).unwrap();
            let b = brute_force_conditional_wp(&ms, 6 - k, 3.0).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn marginal_n1_matches_conditional_example() {
        let d = FiniteDistribution::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let m = brute_force_marginal_wp(&d, 1, 2.0).unwrap();
        let law = FiniteDistribution::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let direct = wp_to_gaussian(&law, 1.0, 2.0).unwrap();
        assert!((m - direct).abs() < 1e-12);
        let exact = (2.0 - 2.0 * (2.0 / std::f64::consts::PI).sqrt()).sqrt();
        assert!((m - exact).abs() < 1e-8);
    }

    #[test]
    fn refuses_large_instances() {
        assert!(matches!(brute_force_conditional_wp(&[0.0; 13], 3, 2.0), Err(KmtError::TooLarge(_))));
        let d = FiniteDistribution::new(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!(brute_force_marginal_wp(&d, 21, 2.0).is_err());
    }

    #[test]
    fn hypergeometric_masses_sum_to_one() {
        for (m, h) in [(2u64, 1u64), (8, 3), (16, 16), (32, 0)] {
            let lo = h.saturating_sub(m / 2);
            let hi = h.min(m / 2);
            let (before, last) = hypergeom_split(m, h, hi);
            assert!((before + last - 1.0).abs() < 1e-12);
            let (b0, _) = hypergeom_split(m, h, lo);
            assert_eq!(b0, 0.0);
        }
    }

    #[test]
    fn n2_trace_is_consistent() {
        let t = binary_dyadic_coupling(2, 0.5, 2.0, 11).unwrap();
        let h = t.y.iter().filter(|&&v| v > 0.0).count() as u64;
        let (before, mass) = binomial_split(2, 0.5, h);
        let expect = pit_level(before, mass, t.uniforms[0], 2f64.sqrt() * 1.0).value;
        assert_eq!(t.z[2], expect);
        assert_eq!(t.z[0], 0.0);
        // W_1 is ±R/2 when the two draws differ, zero otherwise.
        let w1 = t.w[1];
        assert!(w1 == 0.0 || (w1.abs() - 1.0).abs() < 1e-12);
        assert!(binary_dyadic_coupling(6, 0.5, 1.0, 0).is_err());
    }

    #[test]
    fn coupling_is_seed_deterministic() {
        let a = binary_dyadic_coupling(64, 0.3, 1.0, 5).unwrap();
        let b = binary_dyadic_coupling(64, 0.3, 1.0, 5).unwrap();
        assert_eq!(a, b);
    }
}
