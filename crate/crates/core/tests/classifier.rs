mod common;

use neuromon::classifier::{
    grad_check, grad_check_detail, load_model, load_model_checked, save_model, train, Dataset, Example, Layer,
    MlpModel, TrainConfig,
};
use neuromon::spectral::{FeatureVector, ProbeSet};
use neuromon::{Error, Level};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn oracle_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

/// Straight-line forward pass using only the public layer tables.
fn oracle_forward(model: &MlpModel, x: &[f64]) -> f64 {
    let (shift, scale) = model.standardization();
    let mut h: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v - shift[i]) * scale[i]).collect();
    for (li, layer) in model.layers().iter().enumerate() {
        let mut next = Vec::new();
        for o in 0..layer.outputs {
            let mut acc = layer.bias[o];
            for i in 0..layer.inputs {
                acc += layer.weights[o * layer.inputs + i] * h[i];
            }
            next.push(if li < 2 { oracle_gelu(acc) } else { acc });
        }
        h = next;
    }
    1.0 / (1.0 + (-h[0]).exp())
}

fn random_batch(seed: u64, level: Level, n: usize) -> Vec<Example> {
    let mut rng = common::rng(seed);
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..level.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            Example { features: FeatureVector::new(level, &v).unwrap(), label: rng.random_bool(0.5), trace: i as u32 }
        })
        .collect()
}

/// Two Gaussian blobs separated by a margin of 1.0 along the diagonal.
fn blobs(seed: u64, n: usize) -> Vec<Example> {
    let mut rng = common::rng(seed);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2 == 0;
        let (a, b) = loop {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = noise.sample(&mut rng) + if label { 1.0 } else { -1.0 };
            // distance to the separating line b = 0 is at least 0.5 on each side
            if b.abs() >= 0.5 {
                break (a, b);
            }
        };
        let label = b > 0.0;
        out.push(Example { features: FeatureVector::inter(a + b, b - a), label, trace: i as u32 });
    }
    out
}

#[test]
fn seeded_forward_matches_straight_line_oracle() {
    let model = MlpModel::new(Level::Intra, 3, [8, 8], 42).unwrap();
    let x = FeatureVector::intra(0.3, 0.5, 0.1);
    let p = model.forward(&x).unwrap();
    assert!((p - oracle_forward(&model, x.as_slice())).abs() < 1e-12);
}

#[test]
fn separable_blobs_reach_high_accuracy() {
    let data = Dataset { level: Some(Level::Inter), train: blobs(1, 800), test: blobs(2, 200) };
    let cfg = TrainConfig { epochs: 50, seed: 3, learning_rate: 1e-2, ..TrainConfig::default() };
    let (_, report) = train(&data, &cfg).unwrap();
    assert_eq!(report.epochs.len(), 50);
    assert!(report.test.accuracy >= 0.99, "held-out accuracy {}", report.test.accuracy);
}

#[test]
fn duplicated_dataset_gives_same_loss_trajectory() {
    let base = blobs(5, 120);
    let doubled: Vec<Example> = base.iter().flat_map(|e| [*e, *e]).collect();
    let cfg = TrainConfig { epochs: 20, dropout: 0.0, batch_size: 10_000, seed: 8, ..TrainConfig::default() };
    let a = train(&Dataset { level: None, train: base, test: vec![] }, &cfg).unwrap().1;
    let b = train(&Dataset { level: None, train: doubled, test: vec![] }, &cfg).unwrap().1;
    for (x, y) in a.epochs.iter().zip(&b.epochs) {
        assert!((x.loss - y.loss).abs() < 1e-6, "epoch {}: {} vs {}", x.epoch, x.loss, y.loss);
    }
}

#[test]
fn seeded_training_is_bit_identical() {
    let data = Dataset { level: None, train: blobs(9, 300), test: blobs(10, 50) };
    let cfg = TrainConfig { epochs: 5, seed: 77, ..TrainConfig::default() };
    let (m1, r1) = train(&data, &cfg).unwrap();
    let (m2, r2) = train(&data, &cfg).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);
}

#[test]
fn zero_model_on_balanced_pairs_has_zero_gradient() {
    let model = MlpModel::zeros(Level::Intra, 3, [4, 4]);
    let mut batch = Vec::new();
    for (i, e) in random_batch(4, Level::Intra, 8).into_iter().enumerate() {
        batch.push(Example { label: true, trace: 2 * i as u32, ..e });
        batch.push(Example { label: false, trace: 2 * i as u32 + 1, ..e });
    }
    let check = grad_check_detail(&model, &batch, 1e-5).unwrap();
    assert!(check.analytic.iter().all(|g| g.abs() < 1e-8));
    assert!(check.numeric.iter().all(|g| g.abs() < 1e-8));
}

#[test]
fn output_layer_gradient_matches_closed_form() {
    let layers = [
        Layer { inputs: 2, outputs: 1, weights: vec![0.7, -0.4], bias: vec![0.1] },
        Layer { inputs: 1, outputs: 1, weights: vec![1.3], bias: vec![-0.2] },
        Layer { inputs: 1, outputs: 1, weights: vec![0.9], bias: vec![0.05] },
    ];
    let model = MlpModel::from_layers(Level::Inter, layers);
    let batch = random_batch(11, Level::Inter, 6);
    let check = grad_check_detail(&model, &batch, 1e-5).unwrap();
    let (mut d_w3, mut d_b3) = (0.0, 0.0);
    for e in &batch {
        let x = e.features.as_slice();
        let h1 = oracle_gelu(0.7 * x[0] - 0.4 * x[1] + 0.1);
        let h2 = oracle_gelu(1.3 * h1 - 0.2);
        let s = 0.9 * h2 + 0.05;
        let r = 1.0 / (1.0 + (-s).exp()) - if e.label { 1.0 } else { 0.0 };
        d_w3 += r * h2 / batch.len() as f64;
        d_b3 += r / batch.len() as f64;
    }
    // parameter order: w1, b1, w2, b2, w3, b3
    assert!((check.analytic[5] - d_w3).abs() < 1e-10);
    assert!((check.analytic[6] - d_b3).abs() < 1e-10);
}

#[test]
fn save_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let data = Dataset { level: None, train: blobs(12, 200), test: vec![] };
    let (model, _) = train(&data, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    for e in blobs(13, 50) {
        assert_eq!(back.forward(&e.features).unwrap().to_bits(), model.forward(&e.features).unwrap().to_bits());
    }
}

#[test]
fn tampered_dimension_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&MlpModel::new(Level::Intra, 3, [16, 16], 1).unwrap(), &path).unwrap();
    let clean = std::fs::read(&path).unwrap();
    // magic(8) + version(2) + level(1) + hash(8), then four u32 widths
    for (field, value) in [(0usize, 2u32), (1, 15), (2, 17), (3, 2)] {
        let mut bytes = clean.clone();
        let at = 19 + 4 * field;
        bytes[at..at + 4].copy_from_slice(&value.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))), "field {field}");
    }
}

#[test]
fn probe_set_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let a = ProbeSet::default();
    let b = ProbeSet::uniform(12).unwrap();
    let mut model = MlpModel::new(Level::Inter, 2, [16, 16], 5).unwrap();
    model.set_probe_hash(a.hash());
    save_model(&model, &path).unwrap();
    assert!(load_model_checked(&path, &a).is_ok());
    assert!(matches!(load_model_checked(&path, &b), Err(Error::ProbeMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_finite_differences(seed in 0u64..1_000_000, intra in any::<bool>()) {
        let level = if intra { Level::Intra } else { Level::Inst };
        let model = MlpModel::new(level, level.dim(), [6, 5], seed).unwrap();
        let batch = random_batch(seed.wrapping_add(1), level, 10);
        let err = grad_check(&model, &batch, 1e-5).unwrap();
        prop_assert!(err <= 1e-4, "max relative error {}", err);
    }

    #[test]
    fn probabilities_are_strictly_inside_unit_interval(
        seed in 0u64..1_000_000,
        x in proptest::collection::vec(-50.0f64..50.0, 3),
    ) {
        let model = MlpModel::new(Level::Intra, 3, [16, 16], seed).unwrap();
        let f = FeatureVector::new(Level::Intra, &x).unwrap();
        let p = model.forward(&f).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert_eq!(p.to_bits(), model.forward(&f).unwrap().to_bits());
    }
}
