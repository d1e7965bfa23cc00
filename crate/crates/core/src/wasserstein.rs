//! Computable Wasserstein-p upper bounds for bounded i.i.d. sums.
//!
//! Three families are provided:
//!
//! * [`omega_conditional`]: the distance between the bridge value `W_k` and
//!   `N(0, σ²k(n−k)/n)`, conditional on the unordered sample, in `L_p`.
//! * [`omega_tilde`] and [`marginal_bound`]: the unconditional distance between
//!   `S_n` and `N(0, nσ²)`.
//! * [`s_cond`]: the split-sample bound used inside the conditional one.
//!
//! Every bound is an infimum over a normalized cutoff `c ≥ 1` and a series
//! truncation order `K`. Each grid point yields a valid bound, so the minimum
//! over any grid is valid. The cutoff grid is `c = 2^{t/8}` for
//! `t = 0..=8·(kappa_grid_size−1)`; growing the grid only adds points.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::special::{
    binomial_pnorm, gamma_ratio_root, gaussian_abs_pnorm, hermite_pnorm, integrate, ln_factorial, HermiteNormMode,
    QuadratureConfig,
};

/// Cutoff sub-steps per doubling of `c`.
pub const KAPPA_SUBSTEPS: usize = 8;
/// Largest argument handed to `exp` inside the tail integrals.
const EXP_CAP: f64 = 700.0;

// ---------------------------------------------------------------------------
// Model and configuration
// ---------------------------------------------------------------------------

/// Observations take values in `[0, R]` and have standard deviation `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedModel {
    pub r: f64,
    pub sigma: f64,
}

impl BoundedModel {
    /// Requires `0 < σ ≤ R/2`.
    pub fn new(r: f64, sigma: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return domain(format!("R must be positive, got {r}"));
        }
        if !(sigma > 0.0) || sigma > r / 2.0 * (1.0 + 1e-12) {
            return domain(format!("sigma must lie in (0, R/2], got sigma={sigma}, R={r}"));
        }
        Ok(Self { r, sigma: sigma.min(r / 2.0) })
    }

    /// Bound on `|Y − EY|`: `(R + √(R² − 4σ²))/2`.
    pub fn r_s(&self) -> f64 {
        0.5 * (self.r + (self.r * self.r - 4.0 * self.sigma * self.sigma).max(0.0).sqrt())
    }

    pub fn tilde_r(&self) -> f64 {
        self.r / self.sigma
    }

    pub fn tilde_r_s(&self) -> f64 {
        self.r_s() / self.sigma
    }

    /// Standard deviation of the bridge value `W_k`.
    pub fn sigma_nk(&self, n: u64, k: u64) -> Result<f64> {
        sigma_nk(n, k, self)
    }
}

/// `σ·√(k(n−k)/n)`.
pub fn sigma_nk(n: u64, k: u64, model: &BoundedModel) -> Result<f64> {
    if k == 0 || k >= n {
        return domain(format!("k must lie in [1, n-1], got k={k}, n={n}"));
    }
    Ok(model.sigma * ((k as f64) * ((n - k) as f64) / n as f64).sqrt())
}

/// Search grids for the bound infima.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundSearchConfig {
    pub p_grid: Vec<u32>,
    pub kappa_grid_size: usize,
    pub k_grid: Vec<u32>,
    pub hermite_mode: HermiteNormMode,
}

impl Default for BoundSearchConfig {
    fn default() -> Self {
        Self::for_budget(0.01)
    }
}

impl BoundSearchConfig {
    /// Moment grid `2..=⌈6 + 3·ln(1/α_floor)⌉`, capped at 64. The optimal `p`
    /// grows like `ln(1/α)`.
    pub fn for_budget(alpha_floor: f64) -> Self {
        let top = (6.0 + 3.0 * (1.0 / alpha_floor.clamp(1e-300, 1.0)).ln()).ceil();
        let top = (top as u32).clamp(2, 64);
        Self {
            p_grid: (2..=top).collect(),
            kappa_grid_size: 24,
            k_grid: (1..=8).collect(),
            hermite_mode: HermiteNormMode::NumericQuadrature,
        }
    }

    pub fn with_p_grid(mut self, p_grid: Vec<u32>) -> Self {
        self.p_grid = p_grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_grid.is_empty() || self.p_grid.iter().any(|&p| p < 2) {
            return domain("p_grid must be nonempty with every p >= 2");
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return domain("K grid must be nonempty with every K >= 1");
        }
        if self.kappa_grid_size == 0 {
            return domain("kappa_grid_size must be positive");
        }
        Ok(())
    }

    fn k_max(&self) -> u32 {
        self.k_grid.iter().copied().max().unwrap_or(1)
    }

    fn c_points(&self) -> usize {
        KAPPA_SUBSTEPS * (self.kappa_grid_size - 1) + 1
    }
}

/// Which expression attained the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundBranch {
    Trivial,
    OmegaFull,
}

/// Output of [`omega_conditional`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBoundResult {
    pub value: f64,
    pub p: u32,
    pub kappa_star: f64,
    pub k_star: u32,
    pub branch: BoundBranch,
}

// ---------------------------------------------------------------------------
// Normalized integral tables
// ---------------------------------------------------------------------------

fn c_at(t: usize) -> f64 {
    2f64.powf(t as f64 / KAPPA_SUBSTEPS as f64)
}

fn cell_cfg() -> QuadratureConfig {
    QuadratureConfig { rel_tol: 1e-11, abs_tol: 1e-300, max_subdivisions: 1 << 12 }
}

/// Slack applied to tabulated integrals so quadrature error cannot shrink a bound.
const TABLE_SLACK: f64 = 1.0 + 1e-9;

/// Cumulative `J(e, c_t) = ∫_1^{c_t} u^{-3/2}(u−1)^e du` with `e = e2/2`.
fn j_table(e2: i32, len: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<i32, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&e2) {
        if v.len() >= len {
            return v.clone();
        }
    }
    let e = e2 as f64 / 2.0;
    let f = |u: f64| u.powf(-1.5) * (u - 1.0).powf(e);
    let table = Arc::new(cumulative(len, &f, |_| false));
    cache.lock().unwrap().insert(e2, table.clone());
    table
}

/// Cumulative `X(e, c_t, μ) = ∫_1^{c_t} u^{-3/2}(u−1)^e (e^{μ(u−1)} − 1) du`.
/// Entries become `+∞` once `μ(c−1)` exceeds the exponent cap.
fn x_table(e2: i32, mu: f64, len: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(i32, u64), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (e2, mu.to_bits());
    if let Some(v) = cache.lock().unwrap().get(&key) {
        if v.len() >= len {
            return v.clone();
        }
    }
    let e = e2 as f64 / 2.0;
    let f = |u: f64| u.powf(-1.5) * (u - 1.0).powf(e) * (mu * (u - 1.0)).exp_m1();
    let table = Arc::new(cumulative(len, &f, |c| mu * (c - 1.0) > EXP_CAP));
    cache.lock().unwrap().insert(key, table.clone());
    table
}

fn cumulative(len: usize, f: &impl Fn(f64) -> f64, blow_up: impl Fn(f64) -> bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    out.push(0.0);
    let mut acc: f64 = 0.0;
    for t in 1..len {
        let (lo, hi) = (c_at(t - 1), c_at(t));
        if !acc.is_finite() || blow_up(hi) {
            acc = f64::INFINITY;
        } else {
            match integrate(f, lo, hi, t == 1, &cell_cfg()) {
                Ok(v) if v.is_finite() => acc += v * TABLE_SLACK,
                _ => acc = f64::INFINITY,
            }
        }
        out.push(acc);
    }
    out
}

// ---------------------------------------------------------------------------
// Shared constants
// ---------------------------------------------------------------------------

const STIRLING: f64 = 19.0 / 300.0;

fn a_p(p: f64) -> f64 {
    2f64.powf(1.0 / p) * (p / 2.0 + 1.0).sqrt() * (0.5 + 1.0 / p).exp()
}

fn a_star(n: f64, p: f64) -> f64 {
    (p / 2.0 + 1.0) * n.powf(1.0 / p - 0.5)
}

fn c_p(p: f64) -> f64 {
    2.0 * SQRT_2 * (p / 4.0 + 1.0).powf(1.0 / p) * (1.0 + p / (p / 2.0).ln())
}

fn hnorm(l: u32, p: f64, mode: HermiteNormMode) -> f64 {
    hermite_pnorm(l, p, mode).expect("p >= 2 checked by caller").value
}

fn znorm(p: f64) -> f64 {
    gaussian_abs_pnorm(p).expect("p >= 2")
}

/// `e^{19/300}·π^{1/4}`.
fn stirling_const() -> f64 {
    STIRLING.exp() * PI.powf(0.25)
}

// ---------------------------------------------------------------------------
// Moment constants of the exchangeable-pair expansion
// ---------------------------------------------------------------------------

fn check_nk(n: u64, k: u64, p: u32) -> Result<()> {
    if k == 0 || k >= n {
        return domain(format!("k must lie in [1, n-1], got k={k}, n={n}"));
    }
    if p < 2 {
        return domain(format!("p must be >= 2, got {p}"));
    }
    Ok(())
}

/// Constant multiplying the odd-order terms of the conditional expansion.
pub fn c_odd(n: u64, k: u64, p: u32, model: &BoundedModel) -> Result<f64> {
    check_nk(n, k, p)?;
    let (nf, kf, mf, p) = (n as f64, k as f64, (n - k) as f64, p as f64);
    let (r, s) = (model.r, model.sigma);
    let r3 = r * r + 3.0 * s * s;
    let mix = (p - 1.0).sqrt().min(a_p(p) + a_star(kf, p));
    let first = {
        let alt1 = (2f64.powf(1.0 / p) * r.powf(2.0 / p) + r3.powf(1.0 / p)).powi(2);
        let alt2 = (r3.powf(1.0 / p) + r.powf(4.0 / p) / (kf.sqrt() * s.powf(2.0 / p)) * mix).powi(2);
        let inner = mf * r3.powf(2.0 / p) + kf * alt1.min(alt2);
        (p - 1.0).sqrt() * (kf * mf).sqrt() * r.powf(-4.0 / p) * s.powf(2.0 / p) * inner.sqrt() / nf
    };
    if p < 4.0 {
        return Ok(first);
    }
    let second = {
        let amp = (s.powf(2.0 / p) * (2f64.powf(1.0 / p) * r.powf(2.0 / p) + r3.powf(1.0 / p)))
            .min(s.powf(2.0 / p) * r3.powf(1.0 / p) + kf.powf(-0.5) * r.powf(4.0 / p) * mix);
        let g1 = r.powi(-2)
            * (mf * kf).sqrt()
            * (mf * s * s * r3 + kf * (r * r * s * s + r.powf(4.0 - 4.0 / p) * s.powf(4.0 / p))).sqrt();
        let g2 = (kf * mf).powf(1.0 / p)
            * r.powf(-4.0 / p)
            * (kf.powf(p - 1.0) * amp.powf(p) + mf.powf(p - 1.0) * s * s * r3).powf(1.0 / p);
        c_p(p) * (g1 + g2) / nf
    };
    Ok(first.min(second))
}

/// Constant multiplying the even-order terms of the conditional expansion.
pub fn c_even(n: u64, k: u64, p: u32, model: &BoundedModel) -> Result<f64> {
    check_nk(n, k, p)?;
    let (nf, kf, mf, pi) = (n as f64, k as f64, (n - k) as f64, p);
    let p = pi as f64;
    let (r, s) = (model.r, model.sigma);
    let r3 = r * r + 3.0 * s * s;
    let first = {
        let m = (0.25f64.powf(1.0 / p) * r.powf(2.0 / p))
            .min(2f64.powf(1.0 / p) * s.powf(2.0 / p) + r.powf(-2.0 / p) * s.powf(2.0 / p) * r3.powf(1.0 / p));
        let inner = mf * s.powf(4.0 / p) * r3.powf(2.0 / p) + kf * r.powf(4.0 / p) * m * m;
        (kf * mf).sqrt() * r.powi(-2) / nf
            * ((p - 1.0).sqrt() * r.powf(2.0 - 4.0 / p) * inner.sqrt() + 2.0 * (kf * mf).sqrt() * s * s)
    };
    let mut best = first;
    if p >= 4.0 {
        let g1 = r.powi(-2)
            * (mf * kf).sqrt()
            * (mf * s * s * r3 + mf * r.powi(4) + kf * (r * r * s * s + r.powf(4.0 - 4.0 / p) * s.powf(4.0 / p)))
                .sqrt();
        let tail =
            (r.powi(4) / 4.0).min(r * r * s * s * (2f64.powf(1.0 / p) + r.powf(-2.0 / p) * r3.powf(1.0 / p)).powf(p));
        let g2 = (kf * mf).powf(1.0 / p)
            * r.powf(-4.0 / p)
            * (mf.powf(p - 1.0) * s * s * r3 + kf.powf(p - 1.0) * r * r * tail).powf(1.0 / p);
        let second = c_p(p) * (g1 + g2) / nf + 2.0 / nf * kf * mf * s * s / (r * r);
        best = best.min(second);
    }
    if 2 * k <= n {
        let q = 2.0 * s * s / (r * r);
        let third = (kf * binomial_pnorm(k, q.min(1.0), p)?
            + mf * kf * 2f64.powf(1.0 / p) * r.powf(-2.0 / p) * s.powf(2.0 / p))
            / nf;
        best = best.min(third);
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Marginal bound
// ---------------------------------------------------------------------------

/// `D_{n,p}`, the variance-fluctuation constant of the marginal bound.
fn d_np(n: f64, p: f64, model: &BoundedModel) -> Result<f64> {
    let trs = model.tilde_r_s();
    let tr = model.tilde_r();
    let b = trs * trs - 1.0;
    if b <= 0.0 {
        return Ok(0.0);
    }
    let v = b.powf(1.0 - 1.0 / p).max(((b.powf(p) + b) / (b + 1.0)).powf(1.0 / p));
    let grr = gamma_ratio_root(p);
    let mut best = ((p - 1.0).sqrt() * v)
        .min(v * a_star(n, p) + b.sqrt() * a_p(p))
        .min(SQRT_2 * grr * trs.powf(2.0 * (1.0 - 2.0 / p)) * b.powf(1.0 / p));
    if p >= 4.0 {
        let q = (2.0 * b / trs.powi(4)).min(1.0);
        let bn = binomial_pnorm(n as u64, q, p / 2.0)?;
        best = best.min(SQRT_2 * 2f64.powf(-1.0 / p) * grr * tr * tr / n.sqrt() * bn.sqrt());
    }
    Ok(best / (2.0 * n.sqrt()))
}

fn c_np(n: f64, p: f64, model: &BoundedModel) -> Result<f64> {
    let tr = model.tilde_r();
    let mut inner = 2f64.powf(1.0 / p) * tr.powf(1.0 - 2.0 / p);
    if p >= 4.0 {
        let q = (2.0 / (tr * tr)).min(1.0);
        inner = inner.min(tr / n.sqrt() * binomial_pnorm(n as u64, q, p / 2.0)?.sqrt());
    }
    Ok(SQRT_2 * gamma_ratio_root(p) * inner)
}

fn b_pn(n: f64, p: f64, model: &BoundedModel) -> Result<f64> {
    let tr = model.tilde_r();
    let q = (2.0 / (tr * tr)).min(1.0);
    Ok(tr * tr / n * binomial_pnorm(n as u64, q, p)?)
}

type CacheKey = (u64, u32, u64, u64, BoundSearchConfig);

fn cache_key(n: u64, p: u32, model: &BoundedModel, cfg: &BoundSearchConfig) -> CacheKey {
    (n, p, model.r.to_bits(), model.sigma.to_bits(), cfg.clone())
}

/// Unconditional bound on `W_p(S_n, N(0, nσ²))` without the trivial branch.
pub fn omega_tilde(n: u64, p: u32, model: &BoundedModel, cfg: &BoundSearchConfig) -> Result<f64> {
    if n == 0 || p < 2 {
        return domain(format!("omega_tilde needs n >= 1 and p >= 2, got n={n}, p={p}"));
    }
    cfg.validate()?;
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = cache_key(n, p, model, cfg);
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return Ok(*v);
    }
    let v = omega_tilde_search(n, p, model, cfg)?;
    cache.lock().unwrap().insert(key, v);
    Ok(v)
}

fn omega_tilde_search(n: u64, pi: u32, model: &BoundedModel, cfg: &BoundSearchConfig) -> Result<f64> {
    let (nf, p) = (n as f64, pi as f64);
    let tr = model.tilde_r();
    let z = znorm(p);
    let d = d_np(nf, p, model)?;
    let cc = c_np(nf, p, model)?;
    let bb = b_pn(nf, p, model)?;
    let a = 1.0 / nf;
    let lambda = (p - 1.0) * tr * tr / 2.0;
    let len = cfg.c_points();
    let kmax = cfg.k_max();
    let sc = stirling_const();
    let mode = cfg.hermite_mode;

    let jb: Vec<Arc<Vec<f64>>> = (1..kmax).map(|j| j_table(2 * j as i32, len)).collect();
    let jc: Vec<Arc<Vec<f64>>> = (1..kmax).map(|j| j_table(2 * j as i32 - 1, len)).collect();
    let x0 = x_table(0, lambda * a, len);
    let xh = x_table(-1, lambda * a, len);
    let h_odd: Vec<f64> = (1..kmax).map(|j| hnorm(2 * j + 1, p, mode)).collect();
    let h_even: Vec<f64> = (1..kmax).map(|j| hnorm(2 * j, p, mode)).collect();

    let mut best = f64::INFINITY;
    for t in 0..len {
        let c = c_at(t);
        let m = (1.0 - 1.0 / c).sqrt();
        let denom = if pi == 2 { 1.0 } else { m };
        if denom <= 0.0 {
            continue;
        }
        let pre = nf.sqrt() / denom;
        let base = z * m.acos() + z * d * m * m;
        if pre * base >= best {
            continue;
        }
        for &kk in &cfg.k_grid {
            let kf = kk as f64;
            let mut b_sum = 0.0;
            let mut c_sum = 0.0;
            for j in 1..kk {
                let jf = j as f64;
                let idx = (j - 1) as usize;
                let lnf = ln_factorial(j);
                let st_b = (-(jf) * 2f64.ln() - lnf).exp() * sc * kf.powf(0.25) * (p - 1.0).sqrt().powf(2.0 * jf + 1.0)
                    / (2.0 * (kf + 1.0) * (2.0 * kf + 1.0).sqrt());
                let coef_b = (h_odd[idx] / ln_factorial(2 * j + 2).exp() - st_b).max(0.0);
                b_sum += tr.powf(2.0 * jf) / nf.sqrt() * coef_b * a.powf(jf - 0.5) * jb[idx][t];
                let st_c = kf.powf(0.25) * (-(jf) * 2f64.ln() - lnf).exp() * (p - 1.0).powf(jf) * sc / (2.0 * kf + 1.0);
                let coef_c = (h_even[idx] / ln_factorial(2 * j + 1).exp() - st_c).max(0.0);
                c_sum += tr.powf(2.0 * jf) / nf * coef_c * a.powf(jf - 1.0) * jc[idx][t];
            }
            b_sum += 0.5 * sc * kf.powf(0.25) * (p - 1.0).sqrt() / ((kf + 1.0) * (2.0 * kf + 1.0).sqrt()) / nf.sqrt()
                * a.powf(-0.5)
                * x0[t];
            c_sum += sc * kf.powf(0.25) / ((2.0 * kf + 1.0) * nf) * a.powf(-1.0) * xh[t];
            let total = pre * (base + bb / 2.0 * b_sum + cc / 2.0 * c_sum);
            if total.is_finite() && total < best {
                best = total;
            }
        }
    }
    Ok(model.sigma * best)
}

/// `min(√(p−1)·√n·(R+σ), ω̃_p(n))`, a bound on `W_p(S_n, N(0, nσ²))`.
pub fn marginal_bound(n: u64, p: u32, model: &BoundedModel, cfg: &BoundSearchConfig) -> Result<f64> {
    let trivial = ((p as f64) - 1.0).sqrt() * (n as f64).sqrt() * (model.r + model.sigma);
    Ok(trivial.min(omega_tilde(n, p, model, cfg)?))
}

/// Unconditional bound on `W_p(W_k, N(0, σ²_{n,k}))` built from the marginal
/// bounds of the two halves.
pub fn s_cond(n: u64, k: u64, model: &BoundedModel, cfg: &BoundSearchConfig, p: u32) -> Result<f64> {
    check_nk(n, k, p)?;
    let trivial = ((p as f64) - 1.0).sqrt() * (n as f64).sqrt() * (model.r + model.sigma);
    let split = if 2 * k == n {
        0.5 * omega_tilde(n, p, model, cfg)?
    } else {
        omega_tilde(k, p, model, cfg)?.max(omega_tilde(n - k, p, model, cfg)?)
    };
    Ok(trivial.min(split))
}

// ---------------------------------------------------------------------------
// Conditional bound
// ---------------------------------------------------------------------------

/// `√(p−1)·σ_{n,k}·(1 + √2·R/σ)`, the triangle-inequality bound.
pub fn trivial_conditional(n: u64, k: u64, p: u32, model: &BoundedModel) -> Result<f64> {
    let s = sigma_nk(n, k, model)?;
    Ok(((p as f64) - 1.0).sqrt() * s * (1.0 + SQRT_2 * model.r / model.sigma))
}

/// Bound on the conditional `L_p` Wasserstein distance between `W_k` and
/// `N(0, σ²_{n,k})`, for one moment order `p`.
pub fn omega_conditional(
    n: u64,
    k: u64,
    p: u32,
    model: &BoundedModel,
    cfg: &BoundSearchConfig,
) -> Result<ConditionalBoundResult> {
    check_nk(n, k, p)?;
    cfg.validate()?;
    if !cfg.p_grid.contains(&p) {
        return domain(format!("p={p} is not in the configured p grid"));
    }
    static CACHE: OnceLock<Mutex<HashMap<(u64, CacheKey), ConditionalBoundResult>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (k, cache_key(n, p, model, cfg));
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return Ok(*v);
    }
    let res = omega_conditional_search(n, k, p, model, cfg)?;
    cache.lock().unwrap().insert(key, res);
    Ok(res)
}

struct ConditionalTerms {
    s_nk: f64,
    s_split: f64,
    z: f64,
    h1_factor: f64,
    c_odd: f64,
    c_even: f64,
    a: f64,
    s_tilde: f64,
    even_pre: f64,
    h_even: Vec<f64>,
    h_odd: Vec<f64>,
    j_half: Vec<Arc<Vec<f64>>>,
    j_int: Vec<Arc<Vec<f64>>>,
    x_half: Arc<Vec<f64>>,
    x_zero: Arc<Vec<f64>>,
}

fn conditional_terms(
    n: u64,
    k: u64,
    pi: u32,
    model: &BoundedModel,
    cfg: &BoundSearchConfig,
) -> Result<ConditionalTerms> {
    let (nf, kf, mf, p) = (n as f64, k as f64, (n - k) as f64, pi as f64);
    let (r, s) = (model.r, model.sigma);
    let trs = model.tilde_r_s();
    let b = (trs * trs - 1.0).max(0.0);
    let mix =
        |j: f64| ((p - 1.0).sqrt() * trs.powf(1.0 - 2.0 / p)).min(a_p(p) + trs.powf(1.0 - 2.0 / p) * a_star(j, p));
    let first =
        ((p - 1.0).sqrt() * b.powf(1.0 - 1.0 / p)).min(a_p(p) * b.sqrt() + a_star(nf, p) * b.powf(1.0 - 1.0 / p));
    let h1_factor = s * (0.5 * first + mix(kf) * mix(mf) / nf.sqrt());

    let s_tilde = r * r * nf / (kf * s * s);
    let a = 1.0 / mf;
    let mu = (p - 1.0) * s_tilde * a / 2.0;
    let len = cfg.c_points();
    let kmax = cfg.k_max();
    let mode = cfg.hermite_mode;
    Ok(ConditionalTerms {
        s_nk: sigma_nk(n, k, model)?,
        s_split: s_cond(n, k, model, cfg, pi)?,
        z: znorm(p),
        h1_factor: znorm(p) * h1_factor,
        c_odd: c_odd(n, k, pi, model)?,
        c_even: c_even(n, k, pi, model)?,
        a,
        s_tilde,
        even_pre: r * nf / (2.0 * s * s * kf * mf.powf(1.5)),
        h_even: (1..=kmax).map(|m| hnorm(2 * m, p, mode)).collect(),
        h_odd: (1..=kmax).map(|m| hnorm(2 * m + 1, p, mode)).collect(),
        j_half: (1..=kmax).map(|m| j_table(2 * m as i32 - 1, len)).collect(),
        j_int: (1..=kmax).map(|m| j_table(2 * m as i32, len)).collect(),
        x_half: x_table(-1, mu, len),
        x_zero: x_table(0, mu, len),
    })
}

/// The odd-order block (without the `C_odd` factor) at cutoff index `t`.
fn odd_block(tm: &ConditionalTerms, model: &BoundedModel, n: u64, k: u64, p: f64, kk: u32, t: usize) -> f64 {
    let (r, mf) = (model.r, (n - k) as f64);
    let kf = kk as f64;
    let sc = stirling_const();
    let mut sum = 0.0;
    for m in 1..=kk {
        let mfl = m as f64;
        let idx = (m - 1) as usize;
        let st = sc * (kf + 1.0).powf(0.25) * (p - 1.0).powf(mfl) / (2f64.powf(mfl) * (2.0 * kf + 3.0));
        let h = tm.h_even[idx] * (ln_factorial(m) - ln_factorial(2 * m + 1)).exp();
        let coef = (h - st).max(0.0);
        let scale = (mfl * tm.s_tilde.ln() - ln_factorial(m) + (mfl - 1.0) * tm.a.ln()).exp();
        sum += scale * coef * tm.j_half[idx][t];
    }
    r / (2.0 * mf) * sum + sc * r * (kf + 1.0).powf(0.25) / (2.0 * (2.0 * kf + 3.0) * mf) / tm.a * tm.x_half[t]
}

/// The even-order block (without the `R·C_even` factor) at cutoff index `t`.
fn even_block(tm: &ConditionalTerms, p: f64, kk: u32, t: usize) -> f64 {
    let kf = kk as f64;
    let sc = stirling_const();
    let mut sum = 0.0;
    for m in 1..=kk {
        let mfl = m as f64;
        let idx = (m - 1) as usize;
        let st = sc * (kf + 1.0).powf(0.25) * (p - 1.0).powf(mfl + 0.5)
            / (2f64.powf(mfl) * (2.0 * kf + 4.0) * (2.0 * kf + 3.0).sqrt());
        let h = tm.h_odd[idx] * (ln_factorial(m) - ln_factorial(2 * m + 2)).exp();
        let coef = (h - st).max(0.0);
        let scale = (mfl * tm.s_tilde.ln() - ln_factorial(m) + (mfl - 0.5) * tm.a.ln()).exp();
        sum += scale * coef * tm.j_int[idx][t];
    }
    tm.even_pre * sum
        + tm.even_pre * sc * (kf + 1.0).powf(0.25) * (p - 1.0).sqrt()
            / ((2.0 * kf + 4.0) * (2.0 * kf + 3.0).sqrt())
            / tm.a.sqrt()
            * tm.x_zero[t]
}

fn omega_conditional_search(
    n: u64,
    k: u64,
    pi: u32,
    model: &BoundedModel,
    cfg: &BoundSearchConfig,
) -> Result<ConditionalBoundResult> {
    let p = pi as f64;
    let trivial = trivial_conditional(n, k, pi, model)?;
    let mut out =
        ConditionalBoundResult { value: trivial, p: pi, kappa_star: f64::NAN, k_star: 0, branch: BoundBranch::Trivial };
    let tm = conditional_terms(n, k, pi, model, cfg)?;
    let kappa_unit = model.r * model.r / (tm.s_nk * tm.s_nk);
    for t in 0..cfg.c_points() {
        let c = c_at(t);
        let m = (1.0 - 1.0 / c).sqrt();
        let head = tm.s_split * (1.0 - m) + tm.s_nk * tm.z * m.acos() + tm.h1_factor * (1.0 - 1.0 / c.sqrt());
        if !(head < out.value) {
            continue;
        }
        for &kk in &cfg.k_grid {
            let odd = tm.c_odd * odd_block(&tm, model, n, k, p, kk, t);
            let even = tm.s_nk * tm.c_even * model.r * even_block(&tm, p, kk, t);
            let total = head + odd + even;
            if total.is_finite() && total < out.value {
                out = ConditionalBoundResult {
                    value: total,
                    p: pi,
                    kappa_star: c * kappa_unit,
                    k_star: kk,
                    branch: BoundBranch::OmegaFull,
                };
            }
        }
    }
    Ok(out)
}

/// Best conditional bound over the whole `p` grid.
pub fn omega_conditional_best(
    n: u64,
    k: u64,
    model: &BoundedModel,
    cfg: &BoundSearchConfig,
) -> Result<ConditionalBoundResult> {
    let results: Result<Vec<_>> = cfg.p_grid.par_iter().map(|&p| omega_conditional(n, k, p, model, cfg)).collect();
    let results = results?;
    Ok(*results.iter().min_by(|a, b| a.value.total_cmp(&b.value).then(a.p.cmp(&b.p))).expect("nonempty p grid"))
}

/// Conditional bound at the midpoint `k = n/2` for every `p` in the grid.
pub fn omega_midpoint(n: u64, model: &BoundedModel, cfg: &BoundSearchConfig) -> Result<Vec<(u32, f64)>> {
    if n < 2 || n % 2 == 1 {
        return domain(format!("omega_midpoint needs an even n >= 2, got {n}"));
    }
    cfg.validate()?;
    cfg.p_grid.par_iter().map(|&p| omega_conditional(n, n / 2, p, model, cfg).map(|r| (p, r.value))).collect()
}
