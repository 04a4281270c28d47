//! Supervised training: repeated-holdout splits, PearsonR, mini-batch Adam
//! with early stopping on validation PearsonR, and random hyperparameter
//! sampling.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Standardizer, TabularDataset};
use crate::model::{
    FrozenInputs, MessagePassingConfig, MlpModel, ModelArtifact, ModelError, PlatoArchitecture, PlatoModel,
    Regressor,
};
use crate::nn::{Activation, Real, Tensor2};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least 5 samples to split, found {0}")]
    TooFewSamples(usize),
    #[error("PearsonR is undefined: the true values are constant")]
    ConstantTruth,
    #[error("PearsonR needs two equal-length vectors of length at least 2 (got {0} and {1})")]
    Length(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Disjoint train/validation/test indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub split_seed: u64,
}

/// Random 60/20/20 split of `n` samples. Validation and test each get
/// `round(0.2·n)` samples, training gets the rest.
pub fn split(n: usize, split_seed: u64) -> Result<SplitSpec> {
    if n < 5 {
        return Err(TrainError::TooFewSamples(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(split_seed, "split", 0));
    let n_hold = (0.2 * n as f64).round() as usize;
    let n_train = n - 2 * n_hold;
    Ok(SplitSpec {
        train: perm[..n_train].to_vec(),
        val: perm[n_train..n_train + n_hold].to_vec(),
        test: perm[n_train + n_hold..].to_vec(),
        split_seed,
    })
}

/// Sample Pearson correlation. A constant prediction scores 0.
pub fn pearson_r(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.len() < 2 {
        return Err(TrainError::Length(y_true.len(), y_pred.len()));
    }
    let n = y_true.len() as f64;
    let mt = y_true.iter().sum::<f64>() / n;
    let mp = y_pred.iter().sum::<f64>() / n;
    let (mut stt, mut spp, mut stp) = (0.0, 0.0, 0.0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let (a, b) = (t - mt, p - mp);
        stt += a * a;
        spp += b * b;
        stp += a * b;
    }
    if stt == 0.0 {
        return Err(TrainError::ConstantTruth);
    }
    if spp == 0.0 || !spp.is_finite() {
        return Ok(0.0);
    }
    Ok((stp / (stt.sqrt() * spp.sqrt())).clamp(-1.0, 1.0))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t));
        let c2 = T::of(1.0 - self.beta2.powi(self.t));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of `‖params‖²` added to the loss.
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            l2: 0.0,
            max_epochs: 200,
            patience: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_r: f64,
}

/// Standardized arrays of one split.
#[derive(Clone, Debug)]
pub struct PreparedSplit<T> {
    pub x_train: Tensor2<T>,
    pub y_train: Vec<T>,
    pub x_val: Tensor2<T>,
    pub y_val: Vec<f64>,
    pub x_test: Tensor2<T>,
    pub y_test: Vec<f64>,
}

impl<T: Real> PreparedSplit<T> {
    /// z-scores features with training statistics. Training targets are
    /// centered and scaled by their training standard deviation; PearsonR
    /// is unaffected.
    pub fn new(ds: &TabularDataset, sp: &SplitSpec) -> Self {
        let st = Standardizer::fit(&ds.x, &sp.train);
        let yt: Vec<f64> = sp.train.iter().map(|&i| ds.y[i]).collect();
        let mean = yt.iter().sum::<f64>() / yt.len() as f64;
        let sd = (yt.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / yt.len() as f64).sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        PreparedSplit {
            x_train: st.transform(&ds.x, &sp.train),
            y_train: yt.iter().map(|v| T::of((v - mean) / sd)).collect(),
            x_val: st.transform(&ds.x, &sp.val),
            y_val: sp.val.iter().map(|&i| ds.y[i]).collect(),
            x_test: st.transform(&ds.x, &sp.test),
            y_test: sp.test.iter().map(|&i| ds.y[i]).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fitted<M> {
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub val_r: f64,
}

/// Why a trial stopped without a usable model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub epoch: usize,
    pub reason: String,
    pub history: Vec<EpochRecord>,
}

fn gather<T: Real>(x: &Tensor2<T>, idx: &[usize]) -> Tensor2<T> {
    let mut data = Vec::with_capacity(idx.len() * x.cols());
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor2::from_vec(idx.len(), x.cols(), data)
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.f64()).collect()
}

/// Mini-batch Adam on `MSE + l2·‖params‖²`, evaluating validation PearsonR
/// after every epoch and keeping the best parameters seen. Stops after
/// `patience` epochs without improvement.
pub fn fit<T: Real, M: Regressor<T>>(
    mut model: M,
    data: &PreparedSplit<T>,
    cfg: &OptimConfig,
    seed_value: u64,
) -> std::result::Result<Fitted<M>, TrialFailure> {
    let fail = |epoch, reason: String, history: &[EpochRecord]| TrialFailure {
        epoch,
        reason,
        history: history.to_vec(),
    };
    let mut params = Vec::with_capacity(model.param_count());
    model.write_params(&mut params);
    let mut best_params = params.clone();
    let mut adam = Adam::new(params.len());
    let mut grad = Vec::with_capacity(params.len());
    let mut order: Vec<usize> = (0..data.x_train.rows()).collect();
    let mut rng = seed::rng(seed_value, "batches", 0);
    let mut history = Vec::new();
    let (mut best_r, mut best_epoch, mut stale) = (f64::NEG_INFINITY, 0, 0);
    let l2 = T::of(cfg.l2);
    let bs = cfg.batch_size.max(1);
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(bs) {
            let xb = gather(&data.x_train, batch);
            let yb: Vec<T> = batch.iter().map(|&i| data.y_train[i]).collect();
            let mut loss = match model.loss_grad(&xb, &yb, &mut grad) {
                Ok(l) => l,
                Err(e) => return Err(fail(epoch, e.to_string(), &history)),
            };
            if cfg.l2 > 0.0 {
                for (g, &p) in grad.iter_mut().zip(&params) {
                    loss += l2 * p * p;
                    *g += T::of(2.0) * l2 * p;
                }
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(fail(epoch, "non-finite loss or gradient".into(), &history));
            }
            adam.step(&mut params, &grad, cfg.learning_rate);
            model.read_params(&params);
            total += loss.f64() * batch.len() as f64;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(fail(epoch, "non-finite parameters".into(), &history));
        }
        let pred = match model.predict(&data.x_val) {
            Ok(p) => to_f64(&p),
            Err(e) => return Err(fail(epoch, e.to_string(), &history)),
        };
        if pred.iter().any(|p| !p.is_finite()) {
            return Err(fail(epoch, "non-finite validation prediction".into(), &history));
        }
        let val_r = pearson_r(&data.y_val, &pred).map_err(|e| fail(epoch, e.to_string(), &history))?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / order.len().max(1) as f64,
            val_r,
        });
        if val_r > best_r {
            best_r = val_r;
            best_epoch = epoch;
            best_params.clone_from(&params);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.read_params(&best_params);
    Ok(Fitted {
        model,
        history,
        best_epoch,
        val_r: best_r,
    })
}

/// One sampled hyperparameter configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub rounds: usize,
    pub beta: f64,
    pub attention_hidden: usize,
    pub inference_layers: usize,
    pub inference_hidden: usize,
    pub layers: usize,
    pub hidden: usize,
    pub sigma: Activation,
    pub activation: Activation,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            l2: 0.0,
            rounds: 2,
            beta: 0.01,
            attention_hidden: 16,
            inference_layers: 2,
            inference_hidden: 32,
            layers: 2,
            hidden: 32,
            sigma: Activation::Identity,
            activation: Activation::Relu,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrialConfig {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            l2: self.l2,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }

    pub fn architecture(&self) -> PlatoArchitecture {
        PlatoArchitecture {
            mp: MessagePassingConfig {
                rounds: self.rounds,
                beta: self.beta,
                sigma: self.sigma,
                attention_hidden: self.attention_hidden,
                impute_non_feature: false,
            },
            inference_layers: self.inference_layers,
            inference_hidden: self.inference_hidden,
            hidden: self.hidden,
            layers: self.layers,
            activation: self.activation,
        }
    }

    /// Stable digest of the serialized config.
    pub fn hash(&self) -> String {
        crate::checksum::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))[..16].to_owned()
    }
}

/// Inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

pub fn range<T>(lo: T, hi: T) -> Range<T> {
    Range { lo, hi }
}

/// Distributions for [`sample_config`]. Real ranges are log-uniform,
/// integer ranges uniform inclusive, lists uniform categorical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: Range<f64>,
    pub batch_sizes: Vec<usize>,
    /// Probability that `l2` is exactly 0.
    pub l2_zero_probability: f64,
    pub l2: Range<f64>,
    pub rounds: Vec<usize>,
    pub beta: Range<f64>,
    pub attention_hidden: Range<usize>,
    pub inference_layers: Range<usize>,
    pub inference_hidden: Range<usize>,
    pub layers: Range<usize>,
    pub hidden: Range<usize>,
    pub sigmas: Vec<Activation>,
    pub activations: Vec<Activation>,
    pub max_epochs: usize,
    pub patience: usize,
}

impl SearchSpace {
    /// The full search ranges.
    pub fn full() -> Self {
        SearchSpace {
            learning_rate: range(1e-4, 5e-3),
            batch_sizes: vec![16, 32, 64],
            l2_zero_probability: 0.5,
            l2: range(1e-5, 1e-2),
            rounds: vec![2],
            beta: range(1e-4, 1e-1),
            attention_hidden: range(16, 512),
            inference_layers: range(2, 6),
            inference_hidden: range(16, 512),
            layers: range(2, 6),
            hidden: range(16, 512),
            sigmas: vec![Activation::Identity],
            activations: vec![Activation::Relu, Activation::Tanh],
            max_epochs: 200,
            patience: 20,
        }
    }

    /// A sub-box of [`full`](Self::full) that keeps a single-core
    /// search tractable: the same distributions with narrower width and
    /// depth ranges. The first layer stays wide next to the inference
    /// network, so the inferred weights cost under a tenth of a dense first
    /// layer at d = 2000, c = 200.
    pub fn desk() -> Self {
        SearchSpace {
            attention_hidden: range(16, 24),
            inference_layers: range(2, 2),
            inference_hidden: range(16, 24),
            layers: range(2, 3),
            hidden: range(64, 128),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        for (name, r) in [("learning_rate", self.learning_rate), ("l2", self.l2), ("beta", self.beta)] {
            if !(r.lo > 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
                return Err(TrainError::Config(format!("{name} range must satisfy 0 < lo ≤ hi")));
            }
        }
        if self.beta.hi > 1.0 {
            return bad("beta must not exceed 1");
        }
        for (name, r) in [
            ("attention_hidden", self.attention_hidden),
            ("inference_layers", self.inference_layers),
            ("inference_hidden", self.inference_hidden),
            ("layers", self.layers),
            ("hidden", self.hidden),
        ] {
            if r.lo == 0 || r.lo > r.hi {
                return Err(TrainError::Config(format!("{name} range must satisfy 1 ≤ lo ≤ hi")));
            }
        }
        if self.batch_sizes.is_empty() || self.rounds.is_empty() || self.sigmas.is_empty() || self.activations.is_empty() {
            return bad("categorical choices must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.l2_zero_probability) {
            return bad("l2_zero_probability must lie in [0, 1]");
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut seed::Rng, r: Range<f64>) -> f64 {
    if r.lo == r.hi {
        return r.lo;
    }
    rng.random_range(r.lo.ln()..=r.hi.ln()).exp().clamp(r.lo, r.hi)
}

fn uniform_int(rng: &mut seed::Rng, r: Range<usize>) -> usize {
    rng.random_range(r.lo..=r.hi)
}

fn choice<T: Copy>(rng: &mut seed::Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

/// Configuration number `index` of the sequence determined by `master`.
pub fn sample_config(master: u64, index: u64, space: &SearchSpace) -> TrialConfig {
    let mut rng = seed::rng(master, "trial-config", index);
    let learning_rate = log_uniform(&mut rng, space.learning_rate);
    let batch_size = choice(&mut rng, &space.batch_sizes);
    let l2 = if rng.random_bool(space.l2_zero_probability) {
        0.0
    } else {
        log_uniform(&mut rng, space.l2)
    };
    TrialConfig {
        learning_rate,
        batch_size,
        l2,
        rounds: choice(&mut rng, &space.rounds),
        beta: log_uniform(&mut rng, space.beta),
        attention_hidden: uniform_int(&mut rng, space.attention_hidden),
        inference_layers: uniform_int(&mut rng, space.inference_layers),
        inference_hidden: uniform_int(&mut rng, space.inference_hidden),
        layers: uniform_int(&mut rng, space.layers),
        hidden: uniform_int(&mut rng, space.hidden),
        sigma: choice(&mut rng, &space.sigmas),
        activation: choice(&mut rng, &space.activations),
        max_epochs: space.max_epochs,
        patience: space.patience,
        seed: seed::derive(master, "trial-seed", index),
    }
}

/// Which network a trial trains.
#[derive(Clone, Debug)]
pub enum ModelSpec<T: Real> {
    /// Inferred first layer. `linear_head` selects PLATO-LR; `no_mp` feeds
    /// the pretrained embeddings straight into ℬ.
    Plato {
        inputs: Arc<FrozenInputs<T>>,
        linear_head: bool,
        no_mp: bool,
    },
    /// Fully trainable `d × h` first layer.
    Mlp,
}

impl<T: Real> ModelSpec<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Plato { linear_head: true, .. } => "plato-lr",
            ModelSpec::Plato { no_mp: true, .. } => "plato-no-mp",
            ModelSpec::Plato { .. } => "plato",
            ModelSpec::Mlp => "mlp",
        }
    }

    /// Architecture this spec trains for `trial`, applying the variant's
    /// overrides.
    pub fn architecture(&self, trial: &TrialConfig) -> PlatoArchitecture {
        let mut a = trial.architecture();
        if let ModelSpec::Plato { linear_head, no_mp, inputs } = self {
            if *linear_head {
                a.layers = 1;
            }
            if *no_mp {
                a.mp.rounds = 0;
            }
            a.mp.impute_non_feature = inputs.graph().node_count() != inputs.d();
        }
        a
    }
}

#[derive(Clone, Debug)]
pub enum TrainedModel<T: Real> {
    Plato(PlatoModel<T>),
    Mlp(MlpModel<T>),
}

impl<T: Real> TrainedModel<T> {
    pub fn count_trainable(&self) -> usize {
        match self {
            TrainedModel::Plato(m) => m.count_trainable(),
            TrainedModel::Mlp(m) => m.param_count(),
        }
    }

    pub fn predict(&self, x: &Tensor2<T>) -> std::result::Result<Vec<T>, ModelError> {
        match self {
            TrainedModel::Plato(m) => m.predict(x),
            TrainedModel::Mlp(m) => m.predict(x),
        }
    }
}

impl<T: Real> From<TrainedModel<T>> for ModelArtifact<T> {
    fn from(m: TrainedModel<T>) -> Self {
        match m {
            TrainedModel::Plato(m) => ModelArtifact::Plato(m),
            TrainedModel::Mlp(m) => ModelArtifact::Mlp(m),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialOutcome<T: Real> {
    pub model: TrainedModel<T>,
    pub val_r: f64,
    pub test_r: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains one configuration on one split and scores the restored best
/// model on the test rows.
pub fn train_trial<T: Real>(
    ds: &TabularDataset,
    sp: &SplitSpec,
    spec: &ModelSpec<T>,
    trial: &TrialConfig,
    run_seed: u64,
) -> std::result::Result<TrialOutcome<T>, TrialFailure> {
    let data = PreparedSplit::<T>::new(ds, sp);
    let early = |reason: String| TrialFailure {
        epoch: 0,
        reason,
        history: Vec::new(),
    };
    let opt = trial.optim();
    let (model, history, best_epoch, val_r) = match spec {
        ModelSpec::Plato { inputs, .. } => {
            let m = PlatoModel::new(spec.architecture(trial), inputs.clone(), seed::derive(run_seed, "init", 0))
                .map_err(|e| early(e.to_string()))?;
            let f = fit(m, &data, &opt, run_seed)?;
            (TrainedModel::Plato(f.model), f.history, f.best_epoch, f.val_r)
        }
        ModelSpec::Mlp => {
            let m = MlpModel::new(ds.d(), trial.hidden, trial.layers, trial.activation, seed::derive(run_seed, "init", 0))
                .map_err(|e| early(e.to_string()))?;
            let f = fit(m, &data, &opt, run_seed)?;
            (TrainedModel::Mlp(f.model), f.history, f.best_epoch, f.val_r)
        }
    };
    let pred = model.predict(&data.x_test).map_err(|e| early(e.to_string()))?;
    let test_r = pearson_r(&data.y_test, &to_f64(&pred)).map_err(|e| early(e.to_string()))?;
    Ok(TrialOutcome {
        model,
        val_r,
        test_r,
        history,
        best_epoch,
    })
}
