use kmt_core::changepoint::{
    block_budget, run_detection_experiment, BlockGrid, Detector, DetectorConfig, ExperimentConfig, ScanMode,
};
use kmt_core::empirical::{default_variance_cs, FixedVarianceCs};
use kmt_core::KmtError;

fn small_config() -> DetectorConfig {
    let mut cfg = DetectorConfig::new(1.0, 56).unwrap();
    cfg.grid = BlockGrid::new(vec![3, 4, 5]).unwrap();
    cfg
}

fn stream(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 + 0.4 * ((i as f64) * 0.7).sin()).collect()
}

fn fed_detector(len: usize) -> Detector<FixedVarianceCs> {
    let cfg = small_config();
    let cs = FixedVarianceCs::new(1.0, 0.2, 0.35).unwrap();
    let mut det = Detector::new(cfg, cs).unwrap();
    for y in stream(len) {
        det.push(y).unwrap();
    }
    det
}

#[test]
fn g_is_left_continuous_at_block_ends() {
    let det = fed_detector(50);
    let grid = det.config().grid.clone();
    for (i, t) in [(1usize, 20usize), (1, 50), (2, 50)] {
        let s = grid.end(i);
        let r = s as f64 / t as f64;
        let (lt, ut) = grid.lookup(t).unwrap();
        let ds = |k: usize| det.delta_star_at(k, t).unwrap();
        // Block i seen from inside, with its fraction equal to 1.
        let mut inside = (1..i).map(|k| ds(k) * (1.0 - r)).sum::<f64>() + (1.0 - r) * ds(i);
        inside += r * ((i + 1)..=lt).map(ds).sum::<f64>();
        if lt != ut {
            let frac_t = (t - grid.end(lt)) as f64 / (grid.end(ut) - grid.end(lt)) as f64;
            inside += r * frac_t * ds(ut);
        }
        inside += det.bridge_at(s).unwrap() + r * det.bridge_at(t).unwrap();
        let g = det.g_beta(s, t).unwrap();
        assert!((g - inside).abs() <= 1e-12 * g, "s={s} t={t}: {g} vs {inside}");
        assert_eq!(det.bridge_at(s).unwrap(), 0.0);
    }
}

#[test]
fn g_and_threshold_are_positive() {
    let det = fed_detector(40);
    for t in 2..=40 {
        for s in 1..t {
            let g = det.g_beta(s, t).unwrap();
            assert!(g > 0.0 && g.is_finite());
            assert!(det.threshold(s, t).unwrap() > 0.0);
        }
    }
}

#[test]
fn future_pairs_are_not_materialized() {
    let det = fed_detector(10);
    assert!(matches!(det.g_beta(3, 30), Err(KmtError::NotMaterialized(3))));
    assert!(det.g_beta(0, 5).is_err());
}

#[test]
fn detector_is_deterministic() {
    let run = |scan| {
        let mut cfg = DetectorConfig::new(3.0, 4096).unwrap();
        cfg.scan = scan;
        let cs = default_variance_cs(3.0, cfg.delta1).unwrap();
        let mut det = Detector::new(cfg, cs).unwrap();
        let mut alarms = Vec::new();
        for t in 0..3000 {
            let y = 0.5 + 0.3 * ((t * 7919 % 101) as f64 / 101.0) + if t > 1000 { 2.0 } else { 0.0 };
            if let Some(a) = det.push(y).unwrap() {
                alarms.push(a);
            }
        }
        (alarms, det.blocks().iter().map(|b| b.alpha0).collect::<Vec<_>>())
    };
    assert_eq!(run(ScanMode::Geometric), run(ScanMode::Geometric));
    let (geo, _) = run(ScanMode::Geometric);
    let (all, _) = run(ScanMode::Exhaustive);
    assert_eq!(geo.len(), 1);
    assert_eq!(all.len(), 1);
    assert!(all[0].t <= geo[0].t);
}

#[test]
fn budgets_add_up() {
    let cfg = DetectorConfig::new(1.0, 1 << 20).unwrap();
    let blocks: f64 = (1..=cfg.grid.exponents().len()).map(|i| block_budget(i, cfg.delta2, cfg.beta)).sum();
    assert!(cfg.delta1 + blocks + cfg.delta3() <= cfg.delta);
}

#[test]
fn config_errors() {
    let mut cfg = small_config();
    cfg.delta1 = 0.03;
    cfg.delta2 = 0.03;
    assert!(cfg.validate().is_err());
    let cfg = small_config();
    assert!(Detector::new(cfg.clone(), default_variance_cs(1.0, 0.02).unwrap()).is_err());
    assert!(Detector::new(cfg, default_variance_cs(2.0, 0.01).unwrap()).is_err());
}

#[test]
fn stream_beyond_grid_rejected() {
    let mut det = fed_detector(56);
    assert!(det.push(0.5).is_err());
}

#[test]
fn large_shift_is_detected() {
    let cfg = DetectorConfig::new(3.0, 4096).unwrap();
    let exp = ExperimentConfig { shift: 2.0, ell: 30, change_at: 1000, horizon: 4096, trials: 8, seed: 5 };
    let summary = run_detection_experiment(&exp, &cfg).unwrap();
    assert_eq!(summary.detection_rate, 1.0);
    assert_eq!(summary.false_alarm_rate, 0.0);
    assert!(summary.mean_delay.unwrap() > 0.0);
}
