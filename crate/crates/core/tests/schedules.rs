use kmt_core::scheduler::{
    build_bridge_schedule, build_sum_schedule, build_sum_schedule_fixed, SplitSearchConfig, VariantConfig,
};
use kmt_core::wasserstein::{BoundSearchConfig, BoundedModel};

fn cfg() -> BoundSearchConfig {
    BoundSearchConfig::for_budget(1e-3)
}

#[test]
fn schedules_are_deterministic() {
    let m = BoundedModel::new(1.0, 0.3).unwrap();
    let split = SplitSearchConfig::default();
    let a = build_sum_schedule(512, &m, 0.05, &cfg(), &split).unwrap();
    let b = build_sum_schedule(512, &m, 0.05, &cfg(), &split).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sum_endpoint_is_delta_star() {
    let m = BoundedModel::new(2.0, 0.4).unwrap();
    for n in [2usize, 64, 1024] {
        let s = build_sum_schedule(n, &m, 0.1, &cfg(), &SplitSearchConfig::default()).unwrap();
        assert_eq!(s.values[n - 1] - s.meta.delta_star.unwrap(), 0.0);
        let (a0, a1) = (s.meta.alpha0_star.unwrap(), s.meta.alpha1_star.unwrap());
        assert!((a0 + a1 - 0.1).abs() < 1e-15 && a0 > 0.0 && a1 > 0.0);
    }
}

#[test]
fn plain_variant_reproduces_base() {
    let m = BoundedModel::new(1.0, 0.2).unwrap();
    let base = build_bridge_schedule(256, &m, 0.05, &cfg(), None).unwrap();
    let plain = build_bridge_schedule(256, &m, 0.05, &cfg(), Some(&VariantConfig::plain())).unwrap();
    assert_eq!(base, plain);
}

#[test]
fn default_variant_is_valid_and_different() {
    let m = BoundedModel::new(1.0, 0.2).unwrap();
    let base = build_bridge_schedule(256, &m, 0.05, &cfg(), None).unwrap();
    let variant = build_bridge_schedule(256, &m, 0.05, &cfg(), Some(&VariantConfig::default())).unwrap();
    assert!(variant.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert_ne!(base.values, variant.values);
}

#[test]
fn sum_schedule_nonincreasing_in_alpha() {
    let cfg = cfg();
    for sigma in [0.1, 0.25, 0.5] {
        let m = BoundedModel::new(1.0, sigma).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        for alpha in [0.01, 0.05, 0.1, 0.2] {
            let s = build_sum_schedule(256, &m, alpha, &cfg, &SplitSearchConfig::default()).unwrap();
            if let Some(p) = &prev {
                for (k, (a, b)) in s.values.iter().zip(p).enumerate() {
                    assert!(a <= b, "sigma={sigma} alpha={alpha} k={}: {a} > {b}", k + 1);
                }
            }
            prev = Some(s.values);
        }
    }
}

#[test]
fn optimized_split_beats_even_split() {
    let m = BoundedModel::new(1.0, 0.25).unwrap();
    let opt = build_sum_schedule(1024, &m, 0.05, &cfg(), &SplitSearchConfig::default()).unwrap();
    let even = build_sum_schedule_fixed(1024, &m, 0.05, 0.025, &cfg()).unwrap();
    assert!(opt.max_value() <= even.max_value());
}

#[test]
fn non_dyadic_bridge_is_truncated() {
    let m = BoundedModel::new(1.0, 0.25).unwrap();
    let full = build_bridge_schedule(128, &m, 0.05, &cfg(), None).unwrap();
    let cut = build_bridge_schedule(100, &m, 0.05, &cfg(), None).unwrap();
    assert_eq!(cut.values.len(), 100);
    assert_eq!(&full.values[..100], &cut.values[..]);
    assert!(build_sum_schedule(100, &m, 0.05, &cfg(), &SplitSearchConfig::default()).is_err());
}

#[test]
fn invalid_inputs_rejected() {
    let m = BoundedModel::new(1.0, 0.25).unwrap();
    assert!(build_bridge_schedule(0, &m, 0.05, &cfg(), None).is_err());
    assert!(build_bridge_schedule(8, &m, 1.0, &cfg(), None).is_err());
    assert!(build_sum_schedule_fixed(8, &m, 0.05, 0.06, &cfg()).is_err());
    assert!(BoundedModel::new(1.0, 0.6).is_err());
}
