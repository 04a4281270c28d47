use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng as _;

use plato::data::TabularDataset;
use plato::model::{FeatureGraph, FrozenInputs, MlpModel, Regressor};
use plato::nn::{Activation, Tensor2};
use plato::seed;
use plato::train::*;

fn linear_toy(n: usize, d: usize, seed_value: u64) -> TabularDataset {
    let mut rng = seed::rng(seed_value, "toy", 0);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor2::from_vec(n, d, x);
    let y: Vec<f64> = (0..n).map(|i| plato::nn::dot(x.row(i), &w)).collect();
    TabularDataset::new(
        x,
        y,
        (0..d).map(|j| format!("f{j}")).collect(),
        (0..n).map(|i| format!("s{i}")).collect(),
    )
    .unwrap()
}

fn identity_inputs(d: usize) -> Arc<FrozenInputs<f64>> {
    let mut e = Tensor2::zeros(d, d);
    for j in 0..d {
        e.row_mut(j)[j] = 1.0;
    }
    Arc::new(FrozenInputs::new(e, FeatureGraph::isolated(d)).unwrap())
}

fn plato_lr_spec(d: usize) -> ModelSpec<f64> {
    ModelSpec::Plato {
        inputs: identity_inputs(d),
        linear_head: true,
        no_mp: true,
    }
}

#[test]
fn split_sizes_and_errors() {
    let s = split(100, 7).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
    let s = split(5, 7).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3, 1, 1));
    assert!(matches!(split(4, 0), Err(TrainError::TooFewSamples(4))));
    assert_eq!(split(50, 3).unwrap(), split(50, 3).unwrap());
    assert_ne!(split(50, 3).unwrap(), split(50, 4).unwrap());
}

proptest! {
    #[test]
    fn split_partitions(n in 5usize..400, seed_value in any::<u64>()) {
        let s = split(n, seed_value).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(s.val.len() == s.test.len() && !s.train.is_empty());
    }

    #[test]
    fn pearson_affine_invariance(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        a in 0.1f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(t.iter().any(|&v| (v - t[0]).abs() > 1e-6));
        let r = pearson_r(&t, &p).unwrap();
        let scaled: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson_r(&t, &scaled).unwrap() - r).abs() < 1e-9);
        let flipped: Vec<f64> = p.iter().map(|v| -a * v + b).collect();
        prop_assert!((pearson_r(&t, &flipped).unwrap() + r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn sampled_configs_stay_in_the_desk_box(index in any::<u64>()) {
        let space = SearchSpace::desk();
        let c = sample_config(11, index, &space);
        prop_assert!(space.attention_hidden.lo <= c.attention_hidden && c.attention_hidden <= space.attention_hidden.hi);
        prop_assert!(space.hidden.lo <= c.hidden && c.hidden <= space.hidden.hi);
        prop_assert!(space.layers.lo <= c.layers && c.layers <= space.layers.hi);
        prop_assert!(space.learning_rate.lo <= c.learning_rate && c.learning_rate <= space.learning_rate.hi);
    }
}

#[test]
fn pearson_reference_values() {
    let r = pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    // 1.5 / sqrt(2 · 4.6667)
    assert!((r - 0.981_980_506_061_965_7).abs() < 1e-12, "{r}");
    assert_eq!(pearson_r(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(), 0.0);
    assert!(matches!(pearson_r(&[2.0, 2.0], &[1.0, 3.0]), Err(TrainError::ConstantTruth)));
    assert!(matches!(pearson_r(&[1.0], &[1.0]), Err(TrainError::Length(1, 1))));
    assert!((pearson_r(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // With bias correction the first step is lr·g/(|g| + eps).
    let mut p = vec![1.0f64, -2.0];
    let mut a = Adam::new(2);
    a.step(&mut p, &[0.5, -4.0], 0.1);
    assert!((p[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
    assert!((p[1] - (-2.0 + 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let ds = linear_toy(30, 5, 1);
    let sp = split(30, 2).unwrap();
    let data = PreparedSplit::<f64>::new(&ds, &sp);
    let model = MlpModel::<f64>::new(5, 4, 2, Activation::Tanh, 3).unwrap();
    let cfg = OptimConfig {
        learning_rate: 0.0,
        max_epochs: 5,
        l2: 1e-3,
        ..OptimConfig::default()
    };
    let f = fit(model.clone(), &data, &cfg, 9).unwrap();
    assert_eq!(f.model, model);
    assert_eq!(f.history.len(), 5);
}

#[test]
fn training_is_deterministic() {
    let ds = linear_toy(40, 6, 4);
    let sp = split(40, 5).unwrap();
    let trial = TrialConfig {
        max_epochs: 15,
        batch_size: 8,
        ..TrialConfig::default()
    };
    let a = train_trial(&ds, &sp, &plato_lr_spec(6), &trial, 77).unwrap();
    let b = train_trial(&ds, &sp, &plato_lr_spec(6), &trial, 77).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.test_r, b.test_r);
    let c = train_trial(&ds, &sp, &plato_lr_spec(6), &trial, 78).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn linear_toy_is_fit_to_small_error() {
    let ds = linear_toy(60, 6, 8);
    let sp = split(60, 1).unwrap();
    let trial = TrialConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        inference_layers: 1,
        hidden: 4,
        max_epochs: 1500,
        patience: 1500,
        ..TrialConfig::default()
    };
    let out = train_trial(&ds, &sp, &plato_lr_spec(6), &trial, 3).unwrap();
    let last = out.history.last().unwrap();
    assert!(out.history[..=out.best_epoch].iter().any(|h| h.train_loss < 1e-3), "{last:?}");
    assert!(out.test_r > 0.999, "{}", out.test_r);
}

#[test]
fn best_validation_parameters_are_restored() {
    let ds = linear_toy(50, 6, 12);
    let sp = split(50, 2).unwrap();
    let data = PreparedSplit::<f64>::new(&ds, &sp);
    let model = MlpModel::<f64>::new(6, 8, 3, Activation::Relu, 1).unwrap();
    let cfg = OptimConfig {
        learning_rate: 3e-2,
        batch_size: 4,
        max_epochs: 40,
        patience: 40,
        ..OptimConfig::default()
    };
    let f = fit(model, &data, &cfg, 5).unwrap();
    let best = f.history.iter().map(|h| h.val_r).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(f.val_r, best);
    assert_eq!(f.history[f.best_epoch].val_r, best);
    let pred = f.model.predict(&data.x_val).unwrap();
    assert!((pearson_r(&data.y_val, &pred).unwrap() - best).abs() < 1e-12);
}

#[test]
fn early_stopping_honors_patience() {
    let ds = linear_toy(40, 4, 2);
    let sp = split(40, 2).unwrap();
    let data = PreparedSplit::<f64>::new(&ds, &sp);
    let model = MlpModel::<f64>::new(4, 4, 2, Activation::Relu, 1).unwrap();
    let cfg = OptimConfig {
        learning_rate: 0.0,
        max_epochs: 100,
        patience: 3,
        ..OptimConfig::default()
    };
    // Nothing changes, so epoch 0 is best and three stale epochs follow.
    assert_eq!(fit(model, &data, &cfg, 0).unwrap().history.len(), 4);
}

#[test]
fn divergence_is_reported_not_raised() {
    let ds = linear_toy(40, 4, 2);
    let sp = split(40, 2).unwrap();
    let trial = TrialConfig {
        learning_rate: 1e200,
        layers: 1,
        ..TrialConfig::default()
    };
    let err = train_trial(&ds, &sp, &ModelSpec::<f64>::Mlp, &trial, 0).unwrap_err();
    assert!(err.reason.contains("non-finite"), "{err:?}");
}

#[test]
fn full_ranges() {
    let s = SearchSpace::full();
    s.validate().unwrap();
    SearchSpace::desk().validate().unwrap();
    assert_eq!((s.beta.lo, s.beta.hi), (1e-4, 1e-1));
    assert_eq!(s.rounds, [2]);
    assert_eq!(s.batch_sizes, [16, 32, 64]);
    assert_eq!((s.max_epochs, s.patience), (200, 20));
    let bad = SearchSpace {
        beta: range(0.0, 0.1),
        ..SearchSpace::desk()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn ten_thousand_samples_respect_bounds() {
    let space = SearchSpace::full();
    let mut zero_l2 = 0;
    for i in 0..10_000 {
        let c = sample_config(42, i, &space);
        assert!((1e-4..=1e-1).contains(&c.beta), "{}", c.beta);
        assert!([16, 32, 64].contains(&c.batch_size));
        assert!((1e-4..=5e-3).contains(&c.learning_rate));
        assert!((2..=6).contains(&c.layers));
        assert!(c.l2 == 0.0 || (1e-5..=1e-2).contains(&c.l2));
        zero_l2 += usize::from(c.l2 == 0.0);
    }
    assert!((4_700..5_300).contains(&zero_l2), "{zero_l2}");
    assert_eq!(sample_config(42, 3, &space), sample_config(42, 3, &space));
    assert_ne!(sample_config(42, 3, &space).hash(), sample_config(42, 4, &space).hash());
}

#[test]
fn variant_overrides() {
    let trial = TrialConfig::default();
    let spec = plato_lr_spec(3);
    let a = spec.architecture(&trial);
    assert_eq!((a.layers, a.mp.rounds), (1, 0));
    assert_eq!(spec.name(), "plato-lr");
    assert_eq!(ModelSpec::<f64>::Mlp.name(), "mlp");
}
