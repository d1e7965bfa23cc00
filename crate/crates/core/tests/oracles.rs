use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kmt_core::oracles::{binary_dyadic_coupling, brute_force_marginal_wp, randomized_pit, FiniteDistribution};
use kmt_core::scheduler::{build_bridge_schedule, build_sum_schedule, SplitSearchConfig};
use kmt_core::special::normal_cdf;
use kmt_core::wasserstein::{marginal_bound, BoundSearchConfig, BoundedModel};

#[test]
fn randomized_pit_is_gaussian() {
    let dist = FiniteDistribution::new(vec![(0.0, 0.3), (1.0, 0.5), (2.5, 0.2)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let m = 20_000;
    let mut z: Vec<f64> = (0..m)
        .map(|_| {
            let v: f64 = rng.random();
            let x = if v < 0.3 {
                0.0
            } else if v < 0.8 {
                1.0
            } else {
                2.5
            };
            randomized_pit(&dist, x, rng.random(), 1.3).unwrap().value / 1.3
        })
        .collect();
    z.sort_by(f64::total_cmp);
    let ks = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / m as f64).abs().max(((i + 1) as f64 / m as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 1.628 / (m as f64).sqrt(), "KS statistic {ks}");
}

#[test]
fn coupling_covariance_matches_brownian() {
    let (n, q, trials) = (8usize, 0.3, 4000u64);
    let sigma2 = q * (1.0 - q);
    let paths: Vec<Vec<f64>> = (0..trials).map(|s| binary_dyadic_coupling(n, q, 1.0, s).unwrap().z).collect();
    for i in 1..=n {
        for j in i..=n {
            let cov = paths.iter().map(|z| z[i] * z[j]).sum::<f64>() / trials as f64;
            let expect = sigma2 * i as f64;
            let se = ((sigma2 * i as f64 * sigma2 * j as f64 + expect * expect) / trials as f64).sqrt();
            assert!((cov - expect).abs() < 5.0 * se, "cov({i},{j}) = {cov}, expected {expect}");
        }
    }
}

#[test]
fn coupling_respects_thresholds_at_n64() {
    let cfg = BoundSearchConfig::for_budget(1e-4);
    let (n, trials) = (64usize, 2000usize);
    let model = BoundedModel::new(1.0, 0.5).unwrap();
    for alpha in [0.05, 0.1] {
        let bridge = build_bridge_schedule(n, &model, alpha, &cfg, None).unwrap();
        let sum = build_sum_schedule(n, &model, alpha, &cfg, &SplitSearchConfig::default()).unwrap();
        let mut hits = (0, 0);
        for seed in 0..trials as u64 {
            let tr = binary_dyadic_coupling(n, 0.5, 1.0, seed).unwrap();
            hits.0 += usize::from((1..=n).any(|k| (tr.w[k] - tr.z_tilde[k]).abs() > bridge.values[k - 1]));
            hits.1 += usize::from((1..=n).any(|k| (tr.s[k] - tr.z[k]).abs() > sum.values[k - 1]));
        }
        let limit = alpha + 3.0 * (alpha / trials as f64).sqrt();
        assert!(hits.0 as f64 / trials as f64 <= limit);
        assert!(hits.1 as f64 / trials as f64 <= limit);
    }
}

#[test]
fn marginal_oracle_below_bound() {
    let cfg = BoundSearchConfig::for_budget(1e-4);
    for (atoms, r) in [
        (vec![(0.0, 0.5), (1.0, 0.5)], 1.0),
        (vec![(0.0, 0.2), (0.5, 0.5), (1.0, 0.3)], 1.0),
        (vec![(0.0, 0.7), (2.0, 0.3)], 2.0),
    ] {
        let dist = FiniteDistribution::new(atoms).unwrap();
        let model = BoundedModel::new(r, dist.variance().sqrt()).unwrap();
        for n in [1usize, 2, 4, 8] {
            for p in [2u32, 3, 4] {
                let brute = brute_force_marginal_wp(&dist, n, p as f64).unwrap();
                let bound = marginal_bound(n as u64, p, &model, &cfg).unwrap();
                assert!(brute <= bound, "n={n} p={p}: {brute} > {bound}");
            }
        }
    }
}
