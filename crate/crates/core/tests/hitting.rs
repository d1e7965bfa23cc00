use std::sync::Arc;

use kmt_core::hitting::{
    hitting_bound, hitting_bound_with_schedule, hitting_schedule, Boundary, CrossingConfig, HittingSweep,
    HittingTimeProblem, MinNOutcome,
};
use kmt_core::scheduler::SplitSearchConfig;
use kmt_core::wasserstein::BoundSearchConfig;

fn bounds() -> BoundSearchConfig {
    BoundSearchConfig::for_budget(1e-4)
}

fn problem(g: f64, alpha: f64) -> HittingTimeProblem {
    let n = 1usize << 10;
    HittingTimeProblem {
        n,
        r: 1.0,
        mu_n: -0.25 / (n as f64).sqrt(),
        sigma_n: 0.5,
        boundary: Boundary::Constant(g),
        alpha,
    }
}

fn crossing(paths: usize, seed: u64) -> CrossingConfig {
    CrossingConfig { paths, seed, ..CrossingConfig::default() }
}

#[test]
fn bound_decreases_with_boundary() {
    let split = SplitSearchConfig::default();
    let p10 = problem(10.0, 1.0 / 1024.0);
    let schedule = Arc::new(hitting_schedule(&p10, &bounds(), &split).unwrap());
    let b10 = hitting_bound_with_schedule(&p10, Arc::clone(&schedule), &crossing(20_000, 1)).unwrap();
    let b5 = hitting_bound_with_schedule(&problem(5.0, 1.0 / 1024.0), schedule, &crossing(20_000, 1)).unwrap();
    assert!(b10.bound > 0.0 && b10.bound < 1.0, "{}", b10.bound);
    assert!(b5.bound <= b10.bound);
}

#[test]
fn crossing_term_nonincreasing_in_alpha() {
    let split = SplitSearchConfig::default();
    let mut prev = f64::INFINITY;
    for alpha in [0.01, 0.05, 0.1, 0.2] {
        let b = hitting_bound(&problem(10.0, alpha), &bounds(), &split, &crossing(20_000, 4)).unwrap();
        assert!(b.crossing.point <= prev, "alpha={alpha}");
        prev = b.crossing.point;
    }
}

#[test]
fn tabulated_boundary_matches_constant() {
    let split = SplitSearchConfig::default();
    let constant = problem(10.0, 0.05);
    let mut tabulated = constant.clone();
    tabulated.boundary = Boundary::Tabulated(vec![10.0; constant.n]);
    let a = hitting_bound(&constant, &bounds(), &split, &crossing(5_000, 2)).unwrap();
    let b = hitting_bound(&tabulated, &bounds(), &split, &crossing(5_000, 2)).unwrap();
    assert_eq!(a.crossing, b.crossing);
}

#[test]
fn doubling_paths_keeps_verdict() {
    let mut sweep = HittingSweep::new(1.0, 0.5, crossing(50_000, 8)).unwrap();
    let MinNOutcome::Found { n, .. } = sweep.min_nontrivial_n(-0.25, 10.0).unwrap() else {
        panic!("expected a nontrivial N");
    };
    let exponent = n.trailing_zeros();
    sweep.crossing.paths = 100_000;
    let doubled = sweep.bound_at(exponent, -0.25, 10.0).unwrap();
    assert!(doubled.bound - doubled.crossing.ci_halfwidth < 1.0);
}

#[test]
fn sweep_rejects_bad_inputs() {
    let mut sweep = HittingSweep::new(1.0, 0.5, crossing(100, 0)).unwrap();
    assert!(sweep.min_nontrivial_n(0.1, 10.0).is_err());
    assert!(sweep.min_nontrivial_n(-0.1, 0.0).is_err());
    assert!(HittingSweep::new(1.0, 0.7, crossing(100, 0)).is_err());
}
