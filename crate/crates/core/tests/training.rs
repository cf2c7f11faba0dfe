use wst_core::toytrain::{train, ExperimentConfig};

// Pinned default configuration with noise-free features, first five epochs.
const GOLDEN: [f64; 5] = [
    3.645102095368511,
    0.06375779501026027,
    0.034357112116455694,
    0.0232975826672369,
    0.017501957514909308,
];

#[test]
fn clean_loss_curve_decreases_and_matches_golden() {
    let mut cfg = ExperimentConfig::default();
    cfg.task.feature_noise = 0.0;
    cfg.optimizer.epochs = 5;
    let curve: Vec<f64> = train(&cfg).unwrap().epochs.iter().map(|e| e.mean_loss).collect();
    assert!(curve.windows(2).all(|w| w[1] < w[0]), "{curve:?}");
    for (got, want) in curve.iter().zip(GOLDEN) {
        assert!((got - want).abs() <= 1e-9 * want.abs(), "{curve:?}");
    }
}

#[test]
fn training_is_reproducible() {
    let mut cfg = ExperimentConfig::default();
    cfg.task.train_size = 100;
    cfg.optimizer.epochs = 2;
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.epochs, b.epochs);
}
