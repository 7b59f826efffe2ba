use aitsr_core::eval::region_report;
use aitsr_core::features::{apply_scaler, assemble, fit_scaler, split, Dataset, SplitSpec};
use aitsr_core::ingest::{timestamps_from_fps, trim_mask};
use aitsr_core::nn::{
    load_model, predict_map, save_model, train, Activation, Budget, EarlyStopping, MlpModel, Optimizer, StopReason,
    TrainConfig,
};
use aitsr_core::seed;
use aitsr_core::synthgen::{four_class_scene, render_video, NoiseSpec, PlateMaterial};
use aitsr_core::tsr::{fit_sequence, TsrConfig};
use proptest::prelude::*;
use rand::Rng;

use Activation::*;

fn adam(lr: f64, batch: usize, epochs: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        optimizer: Optimizer::Adam,
        learning_rate: lr,
        decay_step: 1000,
        decay_rate: 0.9,
        batch_size: batch,
        budget: Budget::Epochs(epochs),
        early_stopping: None,
        check_every_epochs: 10,
        seed,
    }
}

/// Two clusters on either side of the line x0 + x1 = 0 with a 0.2 gap.
fn separable(n: usize, seed_value: u64) -> Dataset {
    let mut rng = seed::rng(seed_value, &[]);
    let mut vectors = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if (a + b).abs() < 0.2 {
            continue;
        }
        vectors.extend([a, b]);
        labels.push(usize::from(a + b > 0.0));
    }
    let provenance = (0..n as u32).map(|i| (0, i)).collect();
    Dataset::new(2, 2, vectors, labels, provenance).unwrap()
}

fn noise_labels(n: usize, f: usize, seed_value: u64) -> Dataset {
    let mut rng = seed::rng(seed_value, &[]);
    let vectors = (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..2)).collect();
    Dataset::new(f, 2, vectors, labels, vec![(0, 0); n]).unwrap()
}

#[test]
fn separable_toy_reaches_99_percent() {
    let ds = separable(200, 1);
    let model = MlpModel::init(&[2, 8, 2], &[Tanh, Softmax], 2).unwrap();
    let (trained, trace) = train(&model, &ds, &ds, &adam(0.01, 32, 2000, 3)).unwrap();
    let (_, acc) = trained.evaluate(&ds).unwrap();
    let first = trace
        .entries
        .iter()
        .find(|e| e.val_accuracy >= 0.99)
        .map(|e| e.epoch);
    println!("final accuracy {acc}, first >= 99% at epoch {first:?}");
    assert!(acc >= 0.99);
}

#[test]
fn loss_decreases_over_100_epochs() {
    let ds = separable(200, 4);
    let model = MlpModel::init(&[2, 8, 2], &[Relu, Softmax], 5).unwrap();
    let (initial, _) = model.evaluate(&ds).unwrap();
    let (trained, _) = train(&model, &ds, &ds, &adam(1e-3, 20, 100, 6)).unwrap();
    let (after, _) = trained.evaluate(&ds).unwrap();
    assert!(after < initial, "{after} >= {initial}");
}

#[test]
fn training_is_deterministic() {
    let ds = separable(120, 7);
    let model = MlpModel::init(&[2, 6, 2], &[Tanh, Softmax], 8).unwrap();
    let config = TrainConfig {
        optimizer: Optimizer::SgdDecay,
        learning_rate: 0.05,
        decay_step: 50,
        decay_rate: 0.9,
        batch_size: 16,
        budget: Budget::Steps(400),
        early_stopping: None,
        check_every_epochs: 3,
        seed: 9,
    };
    let a = train(&model, &ds, &ds, &config).unwrap();
    let b = train(&model, &ds, &ds, &config).unwrap();
    assert_eq!(a, b);
    let c = train(&model, &ds, &ds, &TrainConfig { seed: 10, ..config }).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn early_stopping_returns_best_snapshot() {
    // memorizing noise drives the held-out loss up
    let tr = noise_labels(64, 6, 11);
    let va = noise_labels(64, 6, 12);
    let model = MlpModel::init(&[6, 32, 2], &[Tanh, Softmax], 13).unwrap();
    let config = TrainConfig {
        optimizer: Optimizer::Adam,
        learning_rate: 0.01,
        decay_step: 1,
        decay_rate: 1.0,
        batch_size: 16,
        budget: Budget::Steps(100_000),
        early_stopping: Some(EarlyStopping {
            checks_apart: 20,
            consecutive_increases: 3,
        }),
        check_every_epochs: 1,
        seed: 14,
    };
    let (best, trace) = train(&model, &tr, &va, &config).unwrap();
    let StopReason::EarlyStopped { restored_check } = trace.stop_reason else {
        panic!("did not stop early: {:?}", trace.stop_reason);
    };
    let halt = trace.entries.last().unwrap();
    assert!(halt.step < 100_000);
    let (val_loss, _) = best.evaluate(&va).unwrap();
    assert_eq!(val_loss, trace.entries[restored_check].val_loss);
    assert!(val_loss <= halt.val_loss);
    let tail: Vec<f64> = trace.entries[restored_check..].iter().map(|e| e.val_loss).collect();
    assert_eq!(tail.len(), 4);
    assert!(tail.windows(2).all(|w| w[1] > w[0]), "{tail:?}");
}

#[test]
fn tanh_net_beats_majority_on_negative_features() {
    // every feature negative; class set by magnitude band, classes unbalanced
    let mut rng = seed::rng(21, &[]);
    let sizes = [400usize, 200, 200, 200];
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (class, &count) in sizes.iter().enumerate() {
        for _ in 0..count {
            let centre = -1.0 - class as f64;
            for _ in 0..15 {
                vectors.push(centre + rng.gen_range(-0.3..0.3));
            }
            labels.push(class);
        }
    }
    let n = labels.len();
    let ds = Dataset::new(15, 4, vectors, labels, (0..n as u32).map(|i| (0, i)).collect()).unwrap();
    let (tr, va, te) = split(&ds, &SplitSpec::new(22)).unwrap();
    let model = MlpModel::init(&[15, 10, 20, 4], &[Tanh, Tanh, Softmax], 23).unwrap();
    let (trained, _) = train(&model, &tr, &va, &adam(1e-3, 64, 200, 24)).unwrap();
    let majority = 400.0 / 1000.0;
    let (_, acc) = trained.evaluate(&te).unwrap();
    assert!(acc > majority + 0.2, "accuracy {acc}");
}

#[test]
fn four_quadrant_scene_end_to_end() {
    let material = PlateMaterial::default();
    let (layout, mask) = four_class_scene(48, 40, [0.0, 0.1, 0.2, 0.3], 5.0, &material).unwrap();
    let ts = timestamps_from_fps(240, 1.0);
    let seq = render_video(&layout, &ts, NoiseSpec::relative(material.amplitude, 31), (0.0, 254.0)).unwrap();
    let features = fit_sequence(&seq, &TsrConfig::default());
    let mask = trim_mask(&mask, 5);
    let ds = assemble(&features, &mask).unwrap();
    let (tr, va, _) = split(&ds, &SplitSpec::new(32)).unwrap();
    let stats = fit_scaler(&tr).unwrap();
    let (tr, va) = (apply_scaler(&tr, &stats).unwrap(), apply_scaler(&va, &stats).unwrap());
    let model = MlpModel::init(&[15, 10, 20, 4], &[Tanh, Tanh, Softmax], 33).unwrap();
    let (mut trained, _) = train(&model, &tr, &va, &adam(3e-3, 64, 400, 34)).unwrap();
    trained.scaling = Some(stats);

    let dir = tempfile::tempdir().unwrap();
    save_model(&trained, dir.path().join("m.txt")).unwrap();
    let reloaded = load_model(dir.path().join("m.txt")).unwrap();
    let map = predict_map(&reloaded, &features).unwrap();
    assert_eq!(map, predict_map(&trained, &features).unwrap());
    for region in region_report(&map, &mask).unwrap() {
        assert_eq!(region.majority, region.class_id, "{region:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_outputs_lie_on_simplex(seed_value in any::<u64>()) {
        let model = MlpModel::init(&[15, 10, 20, 4], &[Tanh, Tanh, Softmax], seed_value).unwrap();
        let mut rng = seed::rng(seed_value, &[1]);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..15).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let p = model.forward(&x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn logit_shift_leaves_map_unchanged(seed_value in any::<u64>(), shift in -50.0f64..50.0) {
        let model = MlpModel::init(&[3, 5, 3], &[Relu, Softmax], seed_value).unwrap();
        let mut shifted = model.clone();
        shifted.layers[1].bias.mapv_inplace(|b| b + shift);
        let mut rng = seed::rng(seed_value, &[2]);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            prop_assert_eq!(
                model.classify_unscaled(&x).unwrap(),
                shifted.classify_unscaled(&x).unwrap()
            );
        }
    }
}
