//! Knowledge-graph-regularized MLP.
//!
//! For one sample `x`:
//!
//! 1. `Q⁰ = M`; each round `Qʳ[j] = σ((1 − β)·Qʳ⁻¹[j] + β·Σ_k α_jk·Qʳ⁻¹[k])`
//!    with `α_j· = softmax_k 𝒜(x_j, x_k)` over `j`'s graph neighbors.
//! 2. `Θ̂[j] = s·ℬ(Q[j])`, a shared network applied row-wise, with fixed
//!    output scale `s = 1/√d`.
//! 3. `ŷ = head(act(x·Θ̂ + b))`.
//!
//! Only 𝒜, ℬ, `b` and the head are trained; `M` is frozen.
//!
//! Two evaluation routes give the same function. The direct route runs
//! message passing on `c`-wide embeddings. When `σ` is the identity, message
//! passing is linear and commutes with ℬ's first affine map, so the
//! projected route propagates the narrower `M·W₁` instead. In both routes
//! the last layer of ℬ is folded into the product with `x`:
//! `x·Θ̂ = s·((xᵀA)·W_last + (Σx)·b_last)` where `A` holds ℬ's penultimate
//! activations, so the `d × h` matrix `Θ̂` is never formed during training.

mod artifact;
mod mlp;
mod mp;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{dot, Activation, DenseNet, Init, NetGrads, NnError, Real, Tensor2, Trace};
use crate::seed;

pub use artifact::{load_model, save_model, FileRef, ModelArtifact, ModelKind, ModelManifest, ParamBlock};
pub use mlp::MlpModel;
pub use mp::{attention_weights, propagate, propagate_backward, FeatureGraph};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessagePassingConfig {
    pub rounds: usize,
    /// Neighbor weight, constant over rounds and nodes; must lie in [0, 1].
    pub beta: f64,
    pub sigma: Activation,
    /// Hidden width of the attention network 𝒜.
    pub attention_hidden: usize,
    /// Pass messages over the whole KG, giving non-feature nodes the value 0.
    #[serde(default)]
    pub impute_non_feature: bool,
}

impl Default for MessagePassingConfig {
    fn default() -> Self {
        MessagePassingConfig {
            rounds: 2,
            beta: 0.01,
            sigma: Activation::Identity,
            attention_hidden: 16,
            impute_non_feature: false,
        }
    }
}

impl MessagePassingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(ModelError::Config(format!("beta = {} is outside [0, 1]", self.beta)));
        }
        if self.rounds > 0 && self.attention_hidden == 0 {
            return Err(ModelError::Config("attention_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Shape of a model. `rounds = 0` is the variant that feeds `M` straight
/// into ℬ and has no attention network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatoArchitecture {
    pub mp: MessagePassingConfig,
    /// Layers in ℬ (at least 1).
    pub inference_layers: usize,
    pub inference_hidden: usize,
    /// Width `h` of the first layer and of every hidden upper layer.
    pub hidden: usize,
    /// Depth `L` counting the inferred first layer. `L = 1` makes the whole
    /// model linear in `x` (PLATO-LR): identity first activation and a
    /// single linear output unit.
    pub layers: usize,
    pub activation: Activation,
}

impl PlatoArchitecture {
    pub fn validate(&self) -> Result<()> {
        self.mp.validate()?;
        if self.inference_layers == 0 || self.layers == 0 {
            return Err(ModelError::Config("inference_layers and layers must be positive".into()));
        }
        if self.hidden == 0 || (self.inference_layers > 1 && self.inference_hidden == 0) {
            return Err(ModelError::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn inference_sizes(&self, c: usize) -> Vec<usize> {
        let mut s = vec![c];
        s.extend(std::iter::repeat_n(self.inference_hidden, self.inference_layers - 1));
        s.push(self.hidden);
        s
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.hidden; self.layers.max(2) - 1];
        s.push(1);
        s
    }

    pub fn first_activation(&self) -> Activation {
        if self.layers == 1 {
            Activation::Identity
        } else {
            self.activation
        }
    }

    /// `|Π| + |Φ| + |Θ^[2..L]| + h` without building the model.
    pub fn trainable_count(&self, c: usize) -> usize {
        let net = |sizes: &[usize]| sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum::<usize>();
        let attention = if self.mp.rounds > 0 {
            net(&[2, self.mp.attention_hidden, 1])
        } else {
            0
        };
        attention + net(&self.inference_sizes(c)) + self.hidden + net(&self.head_sizes())
    }
}

/// Frozen inputs shared by every trial: node embeddings (one row per
/// message-passing node) and the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenInputs<T> {
    embeddings: Tensor2<T>,
    graph: FeatureGraph,
}

impl<T: Real> FrozenInputs<T> {
    pub fn new(embeddings: Tensor2<T>, graph: FeatureGraph) -> Result<Self> {
        if embeddings.rows() != graph.node_count() {
            return Err(ModelError::Nn(NnError::Shape {
                context: "embedding rows vs graph nodes",
                expected: graph.node_count(),
                found: embeddings.rows(),
            }));
        }
        if !embeddings.is_finite() {
            return Err(ModelError::NonFinite("embedding entry".into()));
        }
        Ok(FrozenInputs { embeddings, graph })
    }

    pub fn embeddings(&self) -> &Tensor2<T> {
        &self.embeddings
    }

    pub fn graph(&self) -> &FeatureGraph {
        &self.graph
    }

    pub fn c(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn d(&self) -> usize {
        self.graph.feature_count()
    }
}

/// A regression model trained through a flat parameter vector.
pub trait Regressor<T: Real>: Clone + Send + Sync {
    fn param_count(&self) -> usize;
    fn write_params(&self, out: &mut Vec<T>);
    fn read_params(&mut self, src: &[T]);
    /// Mean squared error over the rows of `x`; `grad` receives its gradient
    /// in [`write_params`](Self::write_params) order.
    fn loss_grad(&self, x: &Tensor2<T>, y: &[T], grad: &mut Vec<T>) -> Result<T>;
    fn predict(&self, x: &Tensor2<T>) -> Result<Vec<T>>;
}

#[derive(Clone, Debug)]
pub struct PlatoModel<T: Real> {
    arch: PlatoArchitecture,
    inputs: Arc<FrozenInputs<T>>,
    attention: Option<DenseNet<T>>,
    inference: DenseNet<T>,
    first_bias: Vec<T>,
    head: DenseNet<T>,
    theta_scale: T,
    direct: bool,
}

impl<T: Real> PartialEq for PlatoModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.attention == other.attention
            && self.inference == other.inference
            && self.first_bias == other.first_bias
            && self.head == other.head
    }
}

struct Grads<T> {
    attention: Option<NetGrads<T>>,
    inference: NetGrads<T>,
    first_bias: Vec<T>,
    head: NetGrads<T>,
    /// Gradient with respect to `M·W₁` on the projected route.
    dz0: Option<Tensor2<T>>,
}

struct SampleTrace<T> {
    attention: Option<(mp::AttentionTrace<T>, Vec<T>)>,
    states: Vec<Tensor2<T>>,
    acts: Vec<Tensor2<T>>,
    s: Vec<T>,
    sx: T,
    h1: Vec<T>,
    head: Trace<T>,
    yhat: T,
}

impl<T: Real> PlatoModel<T> {
    /// Glorot-initialized nets with zero biases, seeded from `seed`.
    pub fn new(arch: PlatoArchitecture, inputs: Arc<FrozenInputs<T>>, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed_value, "plato-init", 0);
        let glorot = Init::Glorot { gain: 1.0 };
        let attention = (arch.mp.rounds > 0).then(|| {
            DenseNet::new(&[2, arch.mp.attention_hidden, 1], Activation::Tanh, glorot, &mut rng)
        });
        let inference = DenseNet::new(&arch.inference_sizes(inputs.c()), arch.activation, glorot, &mut rng);
        let head = DenseNet::new(&arch.head_sizes(), arch.activation, glorot, &mut rng);
        let first_bias = vec![T::zero(); arch.hidden];
        Self::from_parts(arch, inputs, attention, inference, first_bias, head)
    }

    /// Assembles a model from explicit networks, checking shapes.
    pub fn from_parts(
        arch: PlatoArchitecture,
        inputs: Arc<FrozenInputs<T>>,
        attention: Option<DenseNet<T>>,
        inference: DenseNet<T>,
        first_bias: Vec<T>,
        head: DenseNet<T>,
    ) -> Result<Self> {
        arch.validate()?;
        let shape = |context, expected: Vec<usize>, found: Vec<usize>| {
            if expected == found {
                Ok(())
            } else {
                Err(ModelError::Config(format!("{context}: expected sizes {expected:?}, found {found:?}")))
            }
        };
        match (&attention, arch.mp.rounds) {
            (None, 0) => {}
            (Some(a), r) if r > 0 => {
                shape("attention", vec![2, arch.mp.attention_hidden, 1], a.layer_sizes())?;
                if a.activation() != Activation::Tanh {
                    return Err(ModelError::Config("attention hidden layer must be tanh".into()));
                }
            }
            _ => return Err(ModelError::Config("attention net present iff rounds > 0".into())),
        }
        shape("inference", arch.inference_sizes(inputs.c()), inference.layer_sizes())?;
        shape("head", arch.head_sizes(), head.layer_sizes())?;
        shape("first bias", vec![arch.hidden], vec![first_bias.len()])?;
        let theta_scale = T::of(1.0 / (inputs.d().max(1) as f64).sqrt());
        Ok(PlatoModel {
            arch,
            inputs,
            attention,
            inference,
            first_bias,
            head,
            theta_scale,
            direct: false,
        })
    }

    pub fn arch(&self) -> &PlatoArchitecture {
        &self.arch
    }

    pub fn inputs(&self) -> &Arc<FrozenInputs<T>> {
        &self.inputs
    }

    pub fn attention(&self) -> Option<&DenseNet<T>> {
        self.attention.as_ref()
    }

    pub fn inference(&self) -> &DenseNet<T> {
        &self.inference
    }

    pub fn head(&self) -> &DenseNet<T> {
        &self.head
    }

    pub fn first_bias(&self) -> &[T] {
        &self.first_bias
    }

    /// Output scale `s` of the inferred weights.
    pub fn theta_scale(&self) -> T {
        self.theta_scale
    }

    /// Forces message passing on full-width embeddings even when `σ` is the
    /// identity. Used to cross-check the projected route.
    pub fn set_direct_route(&mut self, direct: bool) {
        self.direct = direct;
    }

    fn projected(&self) -> bool {
        !self.direct && self.arch.mp.sigma == Activation::Identity
    }

    fn message_passing(&self) -> bool {
        self.attention.is_some() && self.arch.mp.rounds > 0
    }

    /// `|Π| + |Φ| + |Θ^[2..L]| + h`; `M` and `Θ̂` are not parameters.
    pub fn count_trainable(&self) -> usize {
        self.attention.as_ref().map_or(0, DenseNet::trainable_param_count)
            + self.inference.trainable_param_count()
            + self.first_bias.len()
            + self.head.trainable_param_count()
    }

    /// Trainable count of the same network with a conventional dense
    /// first layer: `(d + 1)·h` plus the upper layers.
    pub fn dense_equivalent_count(&self) -> usize {
        (self.inputs.d() + 1) * self.first_bias.len() + self.head.trainable_param_count()
    }

    /// `e = 𝒜(x_j, x_k)`.
    pub fn attention_logit(&self, x_j: T, x_k: T) -> Result<T> {
        if !(x_j.is_finite() && x_k.is_finite()) {
            return Err(ModelError::NonFinite("attention input".into()));
        }
        let net = self
            .attention
            .as_ref()
            .ok_or_else(|| ModelError::Config("model has no attention network".into()))?;
        Ok(net.infer(&Tensor2::from_vec(1, 2, vec![x_j, x_k]))?.get(0, 0))
    }

    fn attention_for(&self, values: &[T]) -> Result<Option<(mp::AttentionTrace<T>, Vec<T>)>> {
        let Some(net) = self.attention.as_ref().filter(|_| self.arch.mp.rounds > 0) else {
            return Ok(None);
        };
        let graph = self.inputs.graph();
        let trace = mp::attention_forward(net, graph.neighborhoods(), values);
        let mut alpha = Vec::new();
        mp::normalize_slots(graph.neighborhoods(), &trace.logits, &mut alpha);
        Ok(Some((trace, alpha)))
    }

    /// Attention coefficients `α_jk` for one sample: one vector per graph
    /// node, ordered like its neighbor list; empty for isolated nodes.
    pub fn attention_coefficients(&self, x_row: &[T]) -> Result<Vec<Vec<T>>> {
        self.check_row(x_row)?;
        let graph = self.inputs.graph();
        let (_, alpha) = self
            .attention_for(&graph.node_values(x_row))?
            .ok_or_else(|| ModelError::Config("model has no attention network".into()))?;
        let nb = graph.neighborhoods();
        let mut rest = alpha.as_slice();
        Ok((0..nb.node_count())
            .map(|v| {
                let (mine, tail) = rest.split_at(nb.degree(v));
                rest = tail;
                mine.to_vec()
            })
            .collect())
    }

    fn check_row(&self, x_row: &[T]) -> Result<()> {
        if x_row.len() != self.inputs.d() {
            return Err(ModelError::Nn(NnError::Shape {
                context: "sample width",
                expected: self.inputs.d(),
                found: x_row.len(),
            }));
        }
        if x_row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("sample value".into()));
        }
        Ok(())
    }

    /// Sample-conditioned embeddings `Q` (`d × c`, feature order).
    pub fn message_pass(&self, x_row: &[T]) -> Result<Tensor2<T>> {
        self.check_row(x_row)?;
        let graph = self.inputs.graph();
        let p0 = self.inputs.embeddings().clone();
        let states = match self.attention_for(&graph.node_values(x_row))? {
            Some((_, alpha)) => propagate(
                graph.neighborhoods(),
                &alpha,
                T::of(self.arch.mp.beta),
                self.arch.mp.sigma,
                p0,
                self.arch.mp.rounds,
            ),
            None => vec![p0],
        };
        Ok(graph.feature_rows(states.last().expect("initial state")))
    }

    /// `Θ̂ = s·ℬ(Q)` row by row (`d × h`).
    pub fn infer_first_layer(&self, q: &Tensor2<T>) -> Result<Tensor2<T>> {
        let theta = self.inference.infer(q)?;
        Ok(theta.map(|v| v * self.theta_scale))
    }

    /// Prediction through explicit `Q` and `Θ̂`; slower than [`Regressor::predict`]
    /// but a literal composition of the three steps.
    pub fn predict_reference(&self, x_row: &[T]) -> Result<T> {
        let theta = self.infer_first_layer(&self.message_pass(x_row)?)?;
        let x = Tensor2::from_vec(1, x_row.len(), x_row.to_vec());
        let mut h1 = x.matmul(&theta);
        for (h, &b) in h1.data_mut().iter_mut().zip(&self.first_bias) {
            *h += b;
        }
        self.arch.first_activation().apply_in_place(h1.data_mut());
        Ok(self.head.infer(&h1)?.get(0, 0))
    }

    fn z0(&self) -> Option<Tensor2<T>> {
        self.projected()
            .then(|| self.inputs.embeddings().matmul(&self.inference.layers()[0].weight))
    }

    fn forward(&self, x_row: &[T], z0: Option<&Tensor2<T>>) -> Result<SampleTrace<T>> {
        self.check_row(x_row)?;
        let graph = self.inputs.graph();
        let attention = self.attention_for(&graph.node_values(x_row))?;
        let p0 = match z0 {
            Some(z) => z.clone(),
            None => self.inputs.embeddings().clone(),
        };
        let states = match &attention {
            Some((_, alpha)) => propagate(
                graph.neighborhoods(),
                alpha,
                T::of(self.arch.mp.beta),
                self.arch.mp.sigma,
                p0,
                self.arch.mp.rounds,
            ),
            None => vec![p0],
        };
        let last = graph.feature_rows(states.last().expect("initial state"));
        let layers = self.inference.layers();
        let first = &layers[0];
        let mut u = if z0.is_some() {
            let mut u = last;
            for j in 0..u.rows() {
                for (v, &b) in u.row_mut(j).iter_mut().zip(&first.bias) {
                    *v += b;
                }
            }
            u
        } else {
            first.affine(&last)
        };
        let act = self.arch.activation;
        let mut acts = Vec::with_capacity(layers.len());
        if layers.len() > 1 {
            act.apply_in_place(u.data_mut());
        }
        acts.push(u);
        for l in &layers[1..layers.len().saturating_sub(1).max(1)] {
            let mut next = l.affine(acts.last().expect("pushed above"));
            act.apply_in_place(next.data_mut());
            acts.push(next);
        }
        let a = acts.last().expect("pushed above");
        let mut s = vec![T::zero(); a.cols()];
        for (j, &x) in x_row.iter().enumerate() {
            if x != T::zero() {
                crate::nn::axpy(x, a.row(j), &mut s);
            }
        }
        let sx: T = x_row.iter().copied().sum();
        let mut pre1: Vec<T> = if layers.len() > 1 {
            let lastl = &layers[layers.len() - 1];
            let mut p: Vec<T> = lastl.bias.iter().map(|&b| b * sx).collect();
            for (q, &sq) in s.iter().enumerate() {
                crate::nn::axpy(sq, lastl.weight.row(q), &mut p);
            }
            p
        } else {
            s.clone()
        };
        for (p, &b) in pre1.iter_mut().zip(&self.first_bias) {
            *p = *p * self.theta_scale + b;
        }
        self.arch.first_activation().apply_in_place(&mut pre1);
        let head = self.head.trace(&Tensor2::from_vec(1, pre1.len(), pre1.clone()))?;
        let yhat = head.output().get(0, 0);
        Ok(SampleTrace {
            attention,
            states,
            acts,
            s,
            sx,
            h1: pre1,
            head,
            yhat,
        })
    }

    fn zero_grads(&self, projected: bool) -> Grads<T> {
        Grads {
            attention: self.attention.as_ref().map(NetGrads::zeros_like),
            inference: NetGrads::zeros_like(&self.inference),
            first_bias: vec![T::zero(); self.first_bias.len()],
            head: NetGrads::zeros_like(&self.head),
            dz0: projected.then(|| {
                Tensor2::zeros(self.inputs.graph().node_count(), self.inference.layers()[0].outputs())
            }),
        }
    }

    fn backward(&self, x_row: &[T], tr: &SampleTrace<T>, dy: T, g: &mut Grads<T>) -> Result<()> {
        let graph = self.inputs.graph();
        let layers = self.inference.layers();
        let nl = layers.len();
        let mut dpre1 = self
            .head
            .backward_trace(&tr.head, Tensor2::from_vec(1, 1, vec![dy]), &mut g.head, true)?
            .into_data();
        self.arch.first_activation().backprop_in_place(&tr.h1, &mut dpre1);
        for (gb, &d) in g.first_bias.iter_mut().zip(&dpre1) {
            *gb += d;
        }
        let gs: Vec<T> = dpre1.iter().map(|&d| d * self.theta_scale).collect();
        let d = x_row.len();
        let outer = |ds: &[T]| {
            let mut m = Tensor2::zeros(d, ds.len());
            for (j, &x) in x_row.iter().enumerate() {
                if x != T::zero() {
                    crate::nn::axpy(x, ds, m.row_mut(j));
                }
            }
            m
        };
        let du = if nl == 1 {
            outer(&gs)
        } else {
            let lastl = &layers[nl - 1];
            let (gw, gb) = &mut g.inference.layers[nl - 1];
            for (q, &sq) in tr.s.iter().enumerate() {
                crate::nn::axpy(sq, &gs, gw.row_mut(q));
            }
            crate::nn::axpy(tr.sx, &gs, gb);
            let ds: Vec<T> = (0..lastl.inputs()).map(|q| dot(lastl.weight.row(q), &gs)).collect();
            let mut da = outer(&ds);
            for l in (1..nl - 1).rev() {
                self.arch.activation.backprop_in_place(tr.acts[l].data(), da.data_mut());
                let (gw, gb) = &mut g.inference.layers[l];
                accumulate_dense(&tr.acts[l - 1], &da, gw, gb);
                da = da.matmul_t(&layers[l].weight);
            }
            self.arch.activation.backprop_in_place(tr.acts[0].data(), da.data_mut());
            da
        };
        let width = du.cols();
        let (gw0, gb0) = &mut g.inference.layers[0];
        for j in 0..du.rows() {
            crate::nn::axpy(T::one(), du.row(j), gb0);
        }
        let mp_on = self.message_passing();
        let mut dalpha = tr
            .attention
            .as_ref()
            .map(|(_, alpha)| vec![T::zero(); alpha.len()]);
        let beta = T::of(self.arch.mp.beta);
        let nb = graph.neighborhoods();
        let last_state = tr.states.last().expect("initial state");
        if let Some(dz0) = g.dz0.as_mut() {
            let mut dlast = Tensor2::zeros(graph.node_count(), width);
            for (j, &v) in graph.feature_nodes().iter().enumerate() {
                dlast.row_mut(v).copy_from_slice(du.row(j));
            }
            let dp0 = match (&tr.attention, dalpha.as_mut()) {
                (Some((_, alpha)), Some(da)) if mp_on => {
                    propagate_backward(nb, alpha, beta, self.arch.mp.sigma, &tr.states, dlast, da)
                }
                _ => dlast,
            };
            dz0.add_assign(&dp0);
        } else {
            let q = graph.feature_rows(last_state);
            crate::nn::t_matmul_acc(q.data(), du.data(), gw0.data_mut(), q.rows(), q.cols(), width);
            if let (Some((_, alpha)), Some(da)) = (&tr.attention, dalpha.as_mut()) {
                let dq = du.matmul_t(&layers[0].weight);
                let mut dlast = Tensor2::zeros(graph.node_count(), dq.cols());
                for (j, &v) in graph.feature_nodes().iter().enumerate() {
                    dlast.row_mut(v).copy_from_slice(dq.row(j));
                }
                propagate_backward(nb, alpha, beta, self.arch.mp.sigma, &tr.states, dlast, da);
            }
        }
        if let (Some((trace, alpha)), Some(da), Some(net), Some(ga)) =
            (&tr.attention, dalpha, &self.attention, g.attention.as_mut())
        {
            let mut dlogits = vec![T::zero(); alpha.len()];
            mp::normalize_slots_backward(nb, alpha, &da, &mut dlogits);
            mp::attention_backward(net, nb, &graph.node_values(x_row), trace, &dlogits, ga);
        }
        Ok(())
    }
}

/// `gw += inputᵀ·delta`, `gb += column sums of delta`.
fn accumulate_dense<T: Real>(input: &Tensor2<T>, delta: &Tensor2<T>, gw: &mut Tensor2<T>, gb: &mut [T]) {
    crate::nn::t_matmul_acc(
        input.data(),
        delta.data(),
        gw.data_mut(),
        input.rows(),
        input.cols(),
        delta.cols(),
    );
    for i in 0..delta.rows() {
        crate::nn::axpy(T::one(), delta.row(i), gb);
    }
}

impl<T: Real> Regressor<T> for PlatoModel<T> {
    fn param_count(&self) -> usize {
        self.count_trainable()
    }

    fn write_params(&self, out: &mut Vec<T>) {
        if let Some(a) = &self.attention {
            a.write_params(out);
        }
        self.inference.write_params(out);
        out.extend_from_slice(&self.first_bias);
        self.head.write_params(out);
    }

    fn read_params(&mut self, src: &[T]) {
        assert_eq!(src.len(), self.count_trainable(), "parameter vector length");
        let mut at = 0;
        if let Some(a) = &mut self.attention {
            at += a.read_params(&src[at..]);
        }
        at += self.inference.read_params(&src[at..]);
        let h = self.first_bias.len();
        self.first_bias.copy_from_slice(&src[at..at + h]);
        at += h;
        self.head.read_params(&src[at..]);
    }

    fn loss_grad(&self, x: &Tensor2<T>, y: &[T], grad: &mut Vec<T>) -> Result<T> {
        assert_eq!(x.rows(), y.len(), "one target per row");
        let z0 = self.z0();
        let mut g = self.zero_grads(z0.is_some());
        let scale = T::of(2.0 / x.rows().max(1) as f64);
        let mut loss = T::zero();
        for (i, &target) in y.iter().enumerate() {
            let tr = self.forward(x.row(i), z0.as_ref())?;
            let r = tr.yhat - target;
            loss += r * r;
            self.backward(x.row(i), &tr, scale * r, &mut g)?;
        }
        let loss = loss / T::of(x.rows().max(1) as f64);
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("loss".into()));
        }
        if let Some(dz0) = &g.dz0 {
            let e = self.inputs.embeddings();
            let gw0 = &mut g.inference.layers[0].0;
            crate::nn::t_matmul_acc(e.data(), dz0.data(), gw0.data_mut(), e.rows(), e.cols(), dz0.cols());
        }
        grad.clear();
        if let (Some(a), Some(ga)) = (&self.attention, &g.attention) {
            ga.write_flat(a, grad);
        }
        g.inference.write_flat(&self.inference, grad);
        grad.extend_from_slice(&g.first_bias);
        g.head.write_flat(&self.head, grad);
        Ok(loss)
    }

    fn predict(&self, x: &Tensor2<T>) -> Result<Vec<T>> {
        let z0 = self.z0();
        (0..x.rows())
            .map(|i| self.forward(x.row(i), z0.as_ref()).map(|t| t.yhat))
            .collect()
    }
}
