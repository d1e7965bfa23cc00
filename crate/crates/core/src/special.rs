//! Numeric primitives shared by the bound formulas.
//!
//! Gaussian quantiles and absolute moments, Hermite polynomial norms under the
//! Gaussian measure, binomial moment norms and an adaptive Gauss–Kronrod
//! integrator with an optional square-root substitution at the lower endpoint.
//! Factorials, Gamma functions and binomial coefficients are handled in log
//! space so that `p` up to 64 and Hermite degrees up to a few dozen never
//! overflow.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, KmtError, Result};

// ---------------------------------------------------------------------------
// Gaussian helpers
// ---------------------------------------------------------------------------

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("standard normal"))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal quantile `Φ⁻¹(u)`; returns ±∞ at the endpoints.
pub fn normal_quantile(u: f64) -> f64 {
    if u <= 0.0 {
        f64::NEG_INFINITY
    } else if u >= 1.0 {
        f64::INFINITY
    } else {
        std_normal().inverse_cdf(u)
    }
}

/// `(E|Z|^p)^{1/p}` for a standard normal `Z`.
pub fn gaussian_abs_pnorm(p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return domain(format!("gaussian_abs_pnorm needs p >= 1, got {p}"));
    }
    let ln_ratio = ln_gamma((p + 1.0) / 2.0) - ln_gamma(0.5);
    Ok(std::f64::consts::SQRT_2 * (ln_ratio / p).exp())
}

/// `(Γ((p+1)/2)/√π)^{1/p}`, the factor that turns `√2·x` into `‖Z‖_p`.
pub(crate) fn gamma_ratio_root(p: f64) -> f64 {
    ((ln_gamma((p + 1.0) / 2.0) - ln_gamma(0.5)) / p).exp()
}

pub(crate) fn ln_factorial(n: u32) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// Gauss–Hermite nodes
// ---------------------------------------------------------------------------

const GH_MIN_NODES: usize = 200;
const GH_MAX_NODES: usize = 600;

/// Positive Gauss–Hermite nodes for the weight `e^{-x²}` with log weights.
///
/// Newton iteration runs on normalized Hermite functions, which keeps every
/// intermediate finite up to 600 nodes.
fn gauss_hermite_half(n: usize) -> Arc<Vec<(f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&n) {
        return v.clone();
    }
    let nodes = Arc::new(compute_gauss_hermite_half(n));
    cache.lock().unwrap().insert(n, nodes.clone());
    nodes
}

fn compute_gauss_hermite_half(n: usize) -> Vec<(f64, f64)> {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut out = Vec::with_capacity(m);
    let mut roots: Vec<f64> = Vec::with_capacity(m);
    for i in 0..m {
        let mut z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => roots[0] - 1.14 * nf.powf(0.426) / roots[0],
            2 => 1.86 * roots[1] - 0.86 * roots[0],
            3 => 1.91 * roots[2] - 0.91 * roots[1],
            _ => 2.0 * roots[i - 1] - roots[i - 2],
        };
        let mut psi_prev = 0.0;
        for _ in 0..100 {
            let (psi_n, psi_nm1) = hermite_functions(n, z, pim4);
            psi_prev = psi_nm1;
            let step = psi_n / ((2.0 * nf).sqrt() * psi_nm1 - z * psi_n);
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, psi_nm1) = hermite_functions(n, z, pim4);
        if psi_nm1 != 0.0 {
            psi_prev = psi_nm1;
        }
        let log_w = -z * z - nf.ln() - 2.0 * psi_prev.abs().ln();
        roots.push(z);
        out.push((z, log_w));
    }
    out
}

/// Returns `(ψ_n(z), ψ_{n−1}(z))` for the orthonormal Hermite functions.
fn hermite_functions(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4 * (-0.5 * z * z).exp();
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}

/// Log of `E|g(Z)|^p` for `Z ~ N(0,1)` by `n`-node Gauss–Hermite quadrature,
/// given `ln|g|`.
fn gh_log_abs_moment(n: usize, p: f64, ln_abs_g: impl Fn(f64) -> f64) -> f64 {
    let half = gauss_hermite_half(n);
    let mut terms = Vec::with_capacity(2 * half.len());
    for (idx, &(x, lw)) in half.iter().enumerate() {
        let z = std::f64::consts::SQRT_2 * x;
        let central = n % 2 == 1 && idx == half.len() - 1;
        terms.push(lw + p * ln_abs_g(z));
        if !central {
            terms.push(lw + p * ln_abs_g(-z));
        }
    }
    log_sum_exp(&terms) - 0.5 * std::f64::consts::PI.ln()
}

// ---------------------------------------------------------------------------
// Hermite norms
// ---------------------------------------------------------------------------

/// How `‖H_ℓ(Z)‖_p` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HermiteNormMode {
    /// Gauss–Hermite quadrature, falling back to the analytic bound when two
    /// resolutions disagree.
    #[default]
    NumericQuadrature,
    /// The hypercontractive bound `√(ℓ!)·(p−1)^{ℓ/2}`.
    AnalyticBound,
}

/// Value of a Hermite norm together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteNorm {
    pub value: f64,
    /// True when the analytic bound was returned.
    pub bound_mode: bool,
}

/// Probabilists' Hermite polynomial `He_ℓ(x)` by the three-term recurrence.
pub fn hermite_he(l: u32, x: f64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let (mut a, mut b) = (1.0, x);
    for j in 1..l {
        let c = x * b - j as f64 * a;
        a = b;
        b = c;
    }
    b
}

fn hermite_analytic(l: u32, p: f64) -> f64 {
    (0.5 * ln_factorial(l) + 0.5 * l as f64 * (p - 1.0).ln()).exp()
}

/// `(E|He_ℓ(Z)|^p)^{1/p}` for `Z ~ N(0,1)`.
pub fn hermite_pnorm(l: u32, p: f64, mode: HermiteNormMode) -> Result<HermiteNorm> {
    if !(p >= 2.0) || !p.is_finite() {
        return domain(format!("hermite_pnorm needs p >= 2, got {p}"));
    }
    let analytic = hermite_analytic(l, p);
    if l == 0 {
        return Ok(HermiteNorm { value: 1.0, bound_mode: false });
    }
    if mode == HermiteNormMode::AnalyticBound {
        return Ok(HermiteNorm { value: analytic, bound_mode: true });
    }

    static CACHE: OnceLock<Mutex<HashMap<(u32, u64), HermiteNorm>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&(l, p.to_bits())) {
        return Ok(*v);
    }

    let need = ((l as f64 * p) / 2.0).ceil() as usize + 20;
    let nodes = need.clamp(GH_MIN_NODES, GH_MAX_NODES);
    let even_integer = p.fract() == 0.0 && (p as u64) % 2 == 0;
    let result = if even_integer && (l as f64 * p) < 2.0 * nodes as f64 {
        let ln_g = |z: f64| hermite_he(l, z).abs().ln();
        let v = (gh_log_abs_moment(nodes, p, ln_g) / p).exp();
        HermiteNorm { value: v.min(analytic), bound_mode: false }
    } else {
        match piecewise_log_abs_moment(l, p) {
            Some(ln_m) => {
                // Inflate by the quadrature tolerance so the value stays an upper estimate.
                let v = (ln_m / p).exp() * (1.0 + 1e-9);
                HermiteNorm { value: v.min(analytic), bound_mode: v >= analytic }
            }
            None => HermiteNorm { value: analytic, bound_mode: true },
        }
    };
    cache.lock().unwrap().insert((l, p.to_bits()), result);
    Ok(result)
}

/// `ln E|He_ℓ(Z)|^p` by adaptive quadrature between consecutive roots of
/// `He_ℓ`, where the integrand is smooth.
fn piecewise_log_abs_moment(l: u32, p: f64) -> Option<f64> {
    let roots: Vec<f64> = gauss_hermite_half(l as usize)
        .iter()
        .map(|&(x, _)| std::f64::consts::SQRT_2 * x)
        .filter(|&r| r > 0.0)
        .rev()
        .collect();
    let ln_f = |z: f64| p * hermite_he(l, z).abs().ln() - 0.5 * z * z;
    let top = roots.last().copied().unwrap_or(0.0);
    // Scan outward for the peak and a cutoff 60 nats below it.
    let mut shift = f64::NEG_INFINITY;
    let mut z = 0.0;
    while z < top + 1.0 + (l as f64 * p).sqrt() * 2.0 {
        shift = shift.max(ln_f(z));
        z += 0.01;
    }
    let mut cutoff = top + 1.0;
    while ln_f(cutoff) > shift - 60.0 {
        cutoff += 0.5;
    }
    let mut breaks = vec![0.0];
    breaks.extend(roots.iter().copied());
    breaks.push(cutoff);
    let cfg = QuadratureConfig { rel_tol: 1e-11, abs_tol: 1e-300, max_subdivisions: 4096 };
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            total += adaptive(&|z: f64| (ln_f(z) - shift).exp(), w[0], w[1], &cfg).ok()?;
        }
    }
    let norm = 2.0 / (2.0 * std::f64::consts::PI).sqrt();
    Some(shift + (total * norm).ln())
}

// ---------------------------------------------------------------------------
// Binomial norms
// ---------------------------------------------------------------------------

/// `(E J^p)^{1/p}` for `J ~ Binomial(n, q)`.
pub fn binomial_pnorm(n: u64, q: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("binomial_pnorm needs q in [0,1], got {q}"));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return domain(format!("binomial_pnorm needs p >= 1, got {p}"));
    }
    if n == 0 || q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(n as f64);
    }
    let (lq, lq1) = (q.ln(), (-q).ln_1p());
    let log_term = |j: u64| ln_binomial(n, j) + j as f64 * lq + (n - j) as f64 * lq1 + p * (j as f64).ln();
    // Successive term ratios decrease away from the mode on both sides, so
    // each truncated tail is bounded by a geometric series.
    let log_ratio_up = |j: u64| ((n - j) as f64 / (j + 1) as f64).ln() + lq - lq1 + p * (1.0 / j as f64).ln_1p();
    let log_ratio_down = |j: u64| (j as f64 / (n - j + 1) as f64).ln() + lq1 - lq + p * (-1.0 / j as f64).ln_1p();
    let mut mode = (((n + 1) as f64 * q).floor() as u64).clamp(1, n);
    while mode < n && log_ratio_up(mode) > 0.0 {
        mode += 1;
    }
    while mode > 1 && log_ratio_down(mode) > 0.0 {
        mode -= 1;
    }
    let peak = log_term(mode);
    let mut terms = vec![peak];
    let mut current = peak;
    let mut j = mode;
    while j < n {
        let r = log_ratio_up(j);
        if current < peak - TAIL_CUTOFF {
            terms.push(current + r - (-r.exp()).ln_1p());
            break;
        }
        current += r;
        j += 1;
        terms.push(current);
    }
    current = peak;
    j = mode;
    while j > 1 {
        let r = log_ratio_down(j);
        if current < peak - TAIL_CUTOFF {
            terms.push(current + r - (-r.exp()).ln_1p());
            break;
        }
        current += r;
        j -= 1;
        terms.push(current);
    }
    Ok((log_sum_exp(&terms) / p).exp())
}

/// Log-scale depth below the peak at which binomial sums switch to a tail bound.
const TAIL_CUTOFF: f64 = 60.0;

// ---------------------------------------------------------------------------
// Adaptive Gauss–Kronrod quadrature
// ---------------------------------------------------------------------------

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-12, max_subdivisions: 1 << 16 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) || self.max_subdivisions < 16 {
            return Err(KmtError::Config(format!("invalid quadrature config {self:?}")));
        }
        Ok(())
    }
}

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077600525007461,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// One 21-point Kronrod rule with its embedded 10-point Gauss rule.
fn gk21(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[10] * fc;
    let mut gauss = 0.0;
    for i in 0..10 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let (v, e) = gk21(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, err: e });
    let (mut total, mut err) = (v, e);
    let mut splits = 0usize;
    while err > cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
        if splits >= cfg.max_subdivisions {
            return Err(KmtError::Quadrature { estimate: total, error_bound: err });
        }
        let seg = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            // Interval cannot be split further in floating point.
            return Err(KmtError::Quadrature { estimate: total, error_bound: err });
        }
        let (v1, e1) = gk21(f, seg.a, mid);
        let (v2, e2) = gk21(f, mid, seg.b);
        total += v1 + v2 - seg.value;
        err += e1 + e2 - seg.err;
        heap.push(Segment { a: seg.a, b: mid, value: v1, err: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, err: e2 });
        splits += 1;
        if !total.is_finite() {
            return Err(KmtError::Quadrature { estimate: total, error_bound: f64::INFINITY });
        }
    }
    // Recompute from the leaves to shed accumulated rounding.
    Ok(heap.iter().map(|s| s.value).sum())
}

/// Adaptive Gauss–Kronrod estimate of `∫_a^b f`.
///
/// With `singular_lower`, the integral is rewritten through `y = a + u²`, which
/// removes an inverse square-root singularity at `a`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, singular_lower: bool, cfg: &QuadratureConfig) -> Result<f64> {
    cfg.validate()?;
    if !(a < b) {
        return domain(format!("integrate needs a < b, got [{a}, {b}]"));
    }
    if singular_lower {
        let g = |u: f64| 2.0 * u * f(a + u * u);
        adaptive(&g, 0.0, (b - a).sqrt(), cfg)
    } else {
        adaptive(&f, a, b, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_pnorm_matches_full_sum() {
        for &(n, q, p) in &[(1u64, 0.3, 2.0), (7, 0.5, 3.0), (200, 0.01, 4.0), (1000, 0.4, 10.0), (5000, 0.9, 32.0)] {
            let (lq, lq1) = (f64::ln(q), (-q).ln_1p());
            let terms: Vec<f64> = (1..=n)
                .map(|j| ln_binomial(n, j) + j as f64 * lq + (n - j) as f64 * lq1 + p * (j as f64).ln())
                .collect();
            let full = (log_sum_exp(&terms) / p).exp();
            let fast = binomial_pnorm(n, q, p).unwrap();
            assert!(fast >= full * (1.0 - 1e-13) && fast <= full * (1.0 + 1e-12), "n={n}: {fast} vs {full}");
        }
    }

    #[test]
    fn gaussian_norms() {
        assert!((gaussian_abs_pnorm(2.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((gaussian_abs_pnorm(1.0).unwrap() - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((gaussian_abs_pnorm(4.0).unwrap() - 3f64.powf(0.25)).abs() < 1e-13);
        assert!(gaussian_abs_pnorm(0.5).is_err());
    }

    #[test]
    fn gauss_hermite_integrates_moments() {
        for &n in &[200usize, 201, 450, 600] {
            let half = gauss_hermite_half(n);
            let mut total = 0.0;
            let mut second = 0.0;
            for (i, &(x, lw)) in half.iter().enumerate() {
                let mult = if n % 2 == 1 && i == half.len() - 1 { 1.0 } else { 2.0 };
                total += mult * lw.exp();
                second += mult * lw.exp() * x * x;
            }
            let sp = std::f64::consts::PI.sqrt();
            assert!((total - sp).abs() < 1e-12, "n={n} total={total}");
            assert!((second - sp / 2.0).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn hermite_examples() {
        let m = HermiteNormMode::NumericQuadrature;
        assert_eq!(hermite_pnorm(0, 7.0, m).unwrap().value, 1.0);
        assert!((hermite_pnorm(2, 2.0, m).unwrap().value - 2f64.sqrt()).abs() < 1e-12);
        assert!((hermite_pnorm(3, 2.0, m).unwrap().value - 6f64.sqrt()).abs() < 1e-12);
        assert!((hermite_pnorm(1, 4.0, m).unwrap().value - 3f64.powf(0.25)).abs() < 1e-12);
        let a = hermite_pnorm(3, 2.0, HermiteNormMode::AnalyticBound).unwrap();
        assert!(a.bound_mode);
        assert!((a.value - 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hermite_odd_p_matches_gaussian_norm() {
        // He_1 = x, so the norm is ‖Z‖_p for every p.
        for p in [3.0, 5.0, 7.5] {
            let h = hermite_pnorm(1, p, HermiteNormMode::NumericQuadrature).unwrap();
            let z = gaussian_abs_pnorm(p).unwrap();
            assert!(!h.bound_mode);
            assert!((h.value - z).abs() / z < 1e-6, "p={p}: {} vs {z}", h.value);
            assert!(h.value >= z * (1.0 - 1e-12));
        }
    }

    #[test]
    fn piecewise_agrees_with_gauss_hermite_for_even_p() {
        for (l, p) in [(3u32, 4.0), (5, 6.0), (8, 2.0), (12, 10.0)] {
            let gh = gh_log_abs_moment(300, p, |z| hermite_he(l, z).abs().ln());
            let pw = piecewise_log_abs_moment(l, p).unwrap();
            assert!((gh - pw).abs() < 1e-9, "l={l} p={p}: {gh} vs {pw}");
        }
    }

    #[test]
    fn numeric_never_exceeds_analytic() {
        for l in 0..=20u32 {
            for p in 2..=12 {
                let p = p as f64;
                let num = hermite_pnorm(l, p, HermiteNormMode::NumericQuadrature).unwrap().value;
                let ana = hermite_pnorm(l, p, HermiteNormMode::AnalyticBound).unwrap().value;
                assert!(num <= ana + 1e-9, "l={l} p={p}");
            }
        }
    }

    #[test]
    fn binomial_examples() {
        assert!((binomial_pnorm(1, 0.25, 3.0).unwrap() - 0.25f64.powf(1.0 / 3.0)).abs() < 1e-14);
        assert!((binomial_pnorm(5, 1.0, 2.0).unwrap() - 5.0).abs() < 1e-14);
        let mut s = 0.0;
        for j in 0..=10u64 {
            let c = (1..=j).fold(1.0, |acc, i| acc * (10 - i + 1) as f64 / i as f64);
            s += c * 0.3f64.powi(j as i32) * 0.7f64.powi(10 - j as i32) * (j as f64).powi(4);
        }
        assert!((binomial_pnorm(10, 0.3, 4.0).unwrap() - s.powf(0.25)).abs() < 1e-12);
    }

    #[test]
    fn integrate_examples() {
        let cfg = QuadratureConfig::default();
        assert!((integrate(|_| 1.0, 0.0, 2.0, false, &cfg).unwrap() - 2.0).abs() < 1e-12);
        let v = integrate(|y| (y - 1.0).powf(-0.5), 1.0, 2.0, true, &cfg).unwrap();
        assert!((v - 2.0).abs() < 2e-8);
        let v = integrate(|y| y.powf(-1.5), 1.0, 4.0, false, &cfg).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
        assert!(integrate(|y| y, 1.0, 1.0, false, &cfg).is_err());
    }

    #[test]
    fn integrate_reports_nonconvergence() {
        let cfg = QuadratureConfig { max_subdivisions: 16, ..Default::default() };
        match integrate(|y| 1.0 / y, 0.0, 1.0, false, &cfg) {
            Err(KmtError::Quadrature { estimate, error_bound }) => {
                assert!(estimate.is_finite() && error_bound > 0.0)
            }
            other => panic!("expected quadrature error, got {other:?}"),
        }
    }
}
