use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reachcast::regress::{load_model, load_model_of, save_model, ModelKind};
use reachcast::{train_gbrt, train_mlp, Dataset, ExecMode, GbrtConfig, MlpConfig, MlpModel, Model};

/// Relative error `|a - n| / (|a| + |n|)` between the analytic gradient and
/// central differences of the loss, over all parameters.
fn gradient_relative_error(model: &MlpModel, x: &Array2<f64>, y: &[f64], l2: f64) -> f64 {
    let (_, grads) = model.loss_and_gradient(x.view(), y, l2, ExecMode::Deterministic);
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
        .collect();
    let h = 1e-6;
    let count = analytic.len();
    let mut numeric = Vec::with_capacity(count);
    for k in 0..count {
        let mut plus = model.clone();
        *plus.parameters_mut().nth(k).unwrap() += h;
        let mut minus = model.clone();
        *minus.parameters_mut().nth(k).unwrap() -= h;
        numeric.push((plus.loss(x.view(), y, l2) - minus.loss(x.view(), y, l2)) / (2.0 * h));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_n: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (norm_a + norm_n).max(1e-300)
}

fn random_network(seed: u64) -> (MlpModel, Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(1..5);
    let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(2..5)).collect();
    let mut model = MlpModel::init(input, &hidden, seed);
    for (m, s) in model.mean.iter_mut().zip(model.scale.iter_mut()) {
        *m = rng.random_range(-0.5..0.5);
        *s = rng.random_range(0.5..2.0);
    }
    let rows = rng.random_range(1..20);
    let x = Array2::from_shape_simple_fn((rows, input), || rng.random_range(-2.0..2.0));
    let y = (0..rows).map(|_| rng.random()).collect();
    (model, x, y)
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let (model, x, y) = random_network(seed);
        let err = gradient_relative_error(&model, &x, &y, 0.01);
        assert!(err < 1e-4, "network {seed}: relative error {err}");
    }
}

fn dataset(rows: usize, dim: usize, seed: u64, target: impl Fn(&[f32]) -> f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f32> = (0..rows * dim).map(|_| rng.random()).collect();
    let y = x.chunks(dim).map(target).collect();
    Dataset::dense(dim, x, y).unwrap()
}

fn training_mse(model: &Model, ds: &Dataset) -> f64 {
    let pred = model.predict_dataset(ds).unwrap();
    pred.iter().zip(ds.labels()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / ds.len() as f64
}

#[test]
fn mlp_fits_a_constant() {
    let ds = dataset(1000, 3, 1, |_| 0.37);
    let cfg = MlpConfig { epochs: 2000, ..Default::default() };
    let model = Model::Mlp(train_mlp(&ds, &cfg, 1).unwrap().model);
    for p in model.predict_dataset(&ds).unwrap() {
        assert!((p - 0.37).abs() < 0.01, "prediction {p}");
    }
}

#[test]
fn mlp_fits_a_linear_target() {
    let w = [0.3, 0.2, 0.25, 0.15];
    let ds = dataset(5000, 4, 2, |x| {
        x.iter().zip(&w).map(|(&a, &b)| a as f64 * b).sum::<f64>().clamp(0.0, 1.0)
    });
    let cfg = MlpConfig { epochs: 40, ..Default::default() };
    let model = Model::Mlp(train_mlp(&ds, &cfg, 2).unwrap().model);
    let mse = training_mse(&model, &ds);
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn gbrt_stump_fits_a_step() {
    let x: Vec<f32> = (-250..250).map(|i| i as f32 / 50.0).collect();
    let y: Vec<f64> = x.iter().map(|&v| if v >= 0.0 { 1.0 } else { 0.0 }).collect();
    let ds = Dataset::dense(1, x, y).unwrap();
    let cfg = GbrtConfig { trees: 1, max_depth: 1, shrinkage: 1.0, ..Default::default() };
    let model = Model::Gbrt(train_gbrt(&ds, &cfg, 0).unwrap().model);
    let mse = training_mse(&model, &ds);
    assert!(mse < 0.01, "mse {mse}");
}

#[test]
fn gbrt_training_loss_never_increases() {
    let ds = dataset(800, 5, 3, |x| ((x[0] * x[1]) as f64 + (x[2] as f64).sin() * 0.3).clamp(0.0, 1.0));
    for cfg in [
        GbrtConfig { trees: 40, ..Default::default() },
        GbrtConfig { trees: 20, max_depth: 5, shrinkage: 1.0, max_bins: 8, ..Default::default() },
    ] {
        let losses = train_gbrt(&ds, &cfg, 3).unwrap().losses;
        assert_eq!(losses.len(), cfg.trees + 1);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0], "loss rose from {} to {}", w[0], w[1]);
        }
        assert!(losses.last().unwrap() < &losses[0]);
    }
}

#[test]
fn trainers_are_deterministic() {
    let ds = dataset(600, 3, 4, |x| x[0] as f64);
    let mlp = MlpConfig { hidden: vec![8], epochs: 3, ..Default::default() };
    let a = train_mlp(&ds, &mlp, 9).unwrap();
    let b = train_mlp(&ds, &MlpConfig { mode: ExecMode::Fast, ..mlp.clone() }, 9).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.losses, b.losses);
    let gbrt = GbrtConfig { trees: 5, subsample: 0.7, ..Default::default() };
    assert_eq!(train_gbrt(&ds, &gbrt, 9).unwrap().model, train_gbrt(&ds, &gbrt, 9).unwrap().model);
}

#[test]
fn saved_models_predict_identically() {
    let ds = dataset(400, 3, 5, |x| (x[0] * x[2]) as f64);
    let mlp = Model::Mlp(train_mlp(&ds, &MlpConfig { hidden: vec![6], epochs: 2, ..Default::default() }, 5).unwrap().model);
    let gbrt = Model::Gbrt(train_gbrt(&ds, &GbrtConfig { trees: 10, ..Default::default() }, 5).unwrap().model);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs: Vec<Vec<f32>> = (0..100).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    for model in [mlp, gbrt] {
        let mut buf = Vec::new();
        save_model(&model, serde_json::Value::Null, &mut buf).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        for x in &inputs {
            assert_eq!(back.predict(x).unwrap(), model.predict(x).unwrap());
        }
        let other = match model.kind() {
            ModelKind::Mlp => ModelKind::Gbrt,
            ModelKind::Gbrt => ModelKind::Mlp,
        };
        assert!(matches!(load_model_of(buf.as_slice(), other), Err(reachcast::Error::ModelType { .. })));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predictions_are_probabilities(seed in any::<u64>(), x in proptest::collection::vec(-1e3f32..1e3, 4)) {
        let mut model = MlpModel::init(4, &[5], seed);
        model.parameters_mut().for_each(|p| *p *= 50.0);
        let p = Model::Mlp(model).predict(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
