use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{NnError, Real, Tensor2};
use crate::seed::Rng;

/// Elementwise nonlinearity applied between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.act_tanh(),
        }
    }

    /// Derivative expressed through the activation's output. For relu the
    /// subgradient at 0 is 0.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, out: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if out > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - out * out,
        }
    }

    pub fn apply_in_place<T: Real>(self, xs: &mut [T]) {
        if self != Activation::Identity {
            for x in xs {
                *x = self.apply(*x);
            }
        }
    }

    /// `grad *= act'(out)` elementwise.
    pub fn backprop_in_place<T: Real>(self, out: &[T], grad: &mut [T]) {
        match self {
            Activation::Identity => {}
            _ => {
                for (g, &o) in grad.iter_mut().zip(out) {
                    *g *= self.derivative_from_output(o);
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)) times `gain`, zero bias.
    Glorot { gain: f64 },
    Zeros,
}

/// Affine layer `y = x · W + b` with `W` stored `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor2<T>,
    pub bias: Vec<T>,
    pub trainable: bool,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Tensor2<T>, bias: Vec<T>) -> Self {
        assert_eq!(weight.cols(), bias.len(), "bias length must match layer width");
        Dense {
            weight,
            bias,
            trainable: true,
        }
    }

    pub fn init(inputs: usize, outputs: usize, init: Init, rng: &mut Rng) -> Self {
        let weight = match init {
            Init::Zeros => Tensor2::zeros(inputs, outputs),
            Init::Glorot { gain } => {
                let limit = gain * (6.0 / (inputs + outputs) as f64).sqrt();
                let data = (0..inputs * outputs)
                    .map(|_| T::of(rng.random_range(-limit..=limit)))
                    .collect();
                Tensor2::from_vec(inputs, outputs, data)
            }
        };
        Dense::new(weight, vec![T::zero(); outputs])
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        (self.inputs() + 1) * self.outputs()
    }

    /// `x · W + b` for every row of `x`.
    pub fn affine(&self, x: &Tensor2<T>) -> Tensor2<T> {
        let mut out = x.matmul(&self.weight);
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        out
    }
}

/// Intermediates of one forward pass, consumed by backward.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// Input to each layer. `inputs[0]` is `None` when the pass started from
    /// the first layer's pre-activation.
    inputs: Vec<Option<Tensor2<T>>>,
    output: Tensor2<T>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Tensor2<T> {
        &self.output
    }

    pub fn into_output(self) -> Tensor2<T> {
        self.output
    }
}

/// Gradients for every layer of a [`DenseNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads<T> {
    pub layers: Vec<(Tensor2<T>, Vec<T>)>,
}

impl<T: Real> NetGrads<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| (Tensor2::zeros(l.inputs(), l.outputs()), vec![T::zero(); l.outputs()]))
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for (w, b) in &mut self.layers {
            w.data_mut().iter_mut().for_each(|v| *v = T::zero());
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Appends trainable blocks in the same order as [`DenseNet::write_params`].
    pub fn write_flat(&self, net: &DenseNet<T>, out: &mut Vec<T>) {
        for (layer, (w, b)) in net.layers.iter().zip(&self.layers) {
            if layer.trainable {
                out.extend_from_slice(w.data());
                out.extend_from_slice(b);
            }
        }
    }
}

/// Fully connected network; `activation` sits between layers, never after
/// the last one.
#[derive(Clone, Debug)]
pub struct DenseNet<T> {
    layers: Vec<Dense<T>>,
    activation: Activation,
    cache: Option<Trace<T>>,
}

impl<T: Real> PartialEq for DenseNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.activation == other.activation
    }
}

impl<T: Real> DenseNet<T> {
    /// `sizes = [input, hidden.., output]`.
    pub fn new(sizes: &[usize], activation: Activation, init: Init, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least one layer");
        let layers = sizes
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], init, rng))
            .collect();
        DenseNet {
            layers,
            activation,
            cache: None,
        }
    }

    pub fn from_layers(layers: Vec<Dense<T>>, activation: Activation) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape {
                context: "network",
                expected: 1,
                found: 0,
            });
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(NnError::Shape {
                    context: "consecutive layers",
                    expected: w[0].outputs(),
                    found: w[1].inputs(),
                });
            }
        }
        Ok(DenseNet {
            layers,
            activation,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::outputs))
            .collect()
    }

    /// Σ (in + 1) · out over all layers.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.trainable)
            .map(Dense::param_count)
            .sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for l in &mut self.layers {
            l.trainable = trainable;
        }
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        for l in self.layers.iter().filter(|l| l.trainable) {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads trainable blocks written by [`write_params`](Self::write_params);
    /// returns the number of values consumed.
    pub fn read_params(&mut self, src: &[T]) -> usize {
        let mut at = 0;
        for l in self.layers.iter_mut().filter(|l| l.trainable) {
            let nw = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&src[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[at..at + nb]);
            at += nb;
        }
        at
    }

    fn check_input(&self, input: &Tensor2<T>) -> Result<(), NnError> {
        if input.cols() != self.input_dim() {
            return Err(NnError::Shape {
                context: "network input",
                expected: self.input_dim(),
                found: input.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, input: &Tensor2<T>) -> Result<Tensor2<T>, NnError> {
        self.check_input(input)?;
        let mut h = self.layers[0].affine(input);
        for l in &self.layers[1..] {
            self.activation.apply_in_place(h.data_mut());
            h = l.affine(&h);
        }
        Ok(h)
    }

    /// Forward pass keeping the intermediates needed by
    /// [`backward_trace`](Self::backward_trace).
    pub fn trace(&self, input: &Tensor2<T>) -> Result<Trace<T>, NnError> {
        self.check_input(input)?;
        let pre0 = self.layers[0].affine(input);
        Ok(self.continue_trace(Some(input.clone()), pre0))
    }

    /// Forward pass starting from an already computed pre-activation of the
    /// first layer. Backward then stops at that pre-activation.
    pub fn trace_from_preactivation(&self, pre0: Tensor2<T>) -> Result<Trace<T>, NnError> {
        if pre0.cols() != self.layers[0].outputs() {
            return Err(NnError::Shape {
                context: "first-layer pre-activation",
                expected: self.layers[0].outputs(),
                found: pre0.cols(),
            });
        }
        Ok(self.continue_trace(None, pre0))
    }

    fn continue_trace(&self, input: Option<Tensor2<T>>, pre0: Tensor2<T>) -> Trace<T> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(input);
        let mut h = pre0;
        for l in &self.layers[1..] {
            self.activation.apply_in_place(h.data_mut());
            let next = l.affine(&h);
            inputs.push(Some(h));
            h = next;
        }
        Trace { inputs, output: h }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input (or, for traces started from a
    /// pre-activation, with respect to that pre-activation). When
    /// `need_input_grad` is false and the trace has an input, the returned
    /// tensor is empty.
    pub fn backward_trace(
        &self,
        trace: &Trace<T>,
        upstream: Tensor2<T>,
        grads: &mut NetGrads<T>,
        need_input_grad: bool,
    ) -> Result<Tensor2<T>, NnError> {
        if upstream.shape() != trace.output.shape() {
            return Err(NnError::Shape {
                context: "upstream gradient",
                expected: trace.output.cols(),
                found: upstream.cols(),
            });
        }
        let mut delta = upstream;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (gw, gb) = &mut grads.layers[l];
            for i in 0..delta.rows() {
                for (b, &d) in gb.iter_mut().zip(delta.row(i)) {
                    *b += d;
                }
            }
            match &trace.inputs[l] {
                Some(input) => {
                    super::tensor::t_matmul_acc(
                        input.data(),
                        delta.data(),
                        gw.data_mut(),
                        input.rows(),
                        input.cols(),
                        delta.cols(),
                    );
                    if l == 0 && !need_input_grad {
                        return Ok(Tensor2::zeros(0, 0));
                    }
                    let mut next = delta.matmul_t(&layer.weight);
                    if l > 0 {
                        self.activation.backprop_in_place(input.data(), next.data_mut());
                    }
                    delta = next;
                }
                None => return Ok(delta),
            }
        }
        Ok(delta)
    }

    /// Stateful forward: caches the trace for a following [`backward`](Self::backward).
    pub fn forward(&mut self, input: &Tensor2<T>) -> Result<Tensor2<T>, NnError> {
        let trace = self.trace(input)?;
        let out = trace.output.clone();
        self.cache = Some(trace);
        Ok(out)
    }

    /// Consumes the cached trace; returns parameter gradients and the input
    /// gradient.
    pub fn backward(&mut self, upstream: &Tensor2<T>) -> Result<(NetGrads<T>, Tensor2<T>), NnError> {
        let trace = self.cache.take().ok_or(NnError::NoForwardCache)?;
        let mut grads = NetGrads::zeros_like(self);
        let dx = self.backward_trace(&trace, upstream.clone(), &mut grads, true)?;
        Ok((grads, dx))
    }

    /// Σ w² over trainable weights and biases.
    pub fn squared_norm(&self) -> T {
        self.layers
            .iter()
            .filter(|l| l.trainable)
            .flat_map(|l| l.weight.data().iter().chain(&l.bias))
            .map(|&v| v * v)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, mse};
    use crate::seed;

    fn single(w: f64, b: f64) -> DenseNet<f64> {
        DenseNet::from_layers(
            vec![Dense::new(Tensor2::from_vec(1, 1, vec![w]), vec![b])],
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let eye = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let net = DenseNet::from_layers(vec![Dense::new(eye, vec![0.0, 0.0])], Activation::Identity).unwrap();
        let x = Tensor2::from_rows(&[vec![0.3, -2.0], vec![5.0, 1.5]]);
        assert_eq!(net.infer(&x).unwrap(), x);
    }

    #[test]
    fn relu_of_negative_is_zero() {
        let l1 = Dense::new(Tensor2::from_rows(&[vec![1.0, 2.0]]), vec![-10.0, -10.0]);
        let l2 = Dense::new(Tensor2::from_rows(&[vec![1.0], vec![1.0]]), vec![0.0]);
        let net = DenseNet::from_layers(vec![l1, l2], Activation::Relu).unwrap();
        let out = net.infer(&Tensor2::from_rows(&[vec![1.0]])).unwrap();
        assert_eq!(out.data(), [0.0]);
    }

    #[test]
    fn affine_arithmetic() {
        let net = single(2.0, 1.0);
        assert_eq!(net.infer(&Tensor2::from_rows(&[vec![3.0]])).unwrap().data(), [7.0]);
    }

    #[test]
    fn shape_mismatch() {
        let net = single(2.0, 1.0);
        assert!(matches!(
            net.infer(&Tensor2::<f64>::zeros(1, 2)),
            Err(NnError::Shape { .. })
        ));
        let bad = DenseNet::from_layers(
            vec![
                Dense::new(Tensor2::<f64>::zeros(1, 2), vec![0.0; 2]),
                Dense::new(Tensor2::zeros(3, 1), vec![0.0]),
            ],
            Activation::Relu,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = single(1.0, 0.0);
        assert!(matches!(
            net.backward(&Tensor2::zeros(1, 1)),
            Err(NnError::NoForwardCache)
        ));
    }

    #[test]
    fn square_loss_gradient_by_hand() {
        // loss = ŷ², ŷ = w·x, x = 1, w = 3: dL/dw = 2·3·1 = 6.
        let mut net = single(3.0, 0.0);
        let y = net.forward(&Tensor2::from_rows(&[vec![1.0]])).unwrap();
        let up = y.map(|v| 2.0 * v);
        let (g, dx) = net.backward(&up).unwrap();
        assert_eq!(g.layers[0].0.data(), [6.0]);
        assert_eq!(g.layers[0].1, [6.0]);
        assert_eq!(dx.data(), [18.0]);
    }

    #[test]
    fn mse_at_target_has_zero_gradients() {
        let mut rng = seed::rng_from(1);
        let mut net = DenseNet::<f64>::new(&[3, 4, 1], Activation::Tanh, Init::Glorot { gain: 1.0 }, &mut rng);
        let x = Tensor2::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]]);
        let y = net.forward(&x).unwrap();
        let (_, grad) = mse(y.data(), y.data());
        let (g, dx) = net.backward(&Tensor2::from_vec(2, 1, grad)).unwrap();
        assert!(g.layers.iter().all(|(w, b)| w.data().iter().chain(b).all(|v| *v == 0.0)));
        assert!(dx.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn param_count_formula() {
        let mut rng = seed::rng_from(2);
        let net = DenseNet::<f64>::new(&[5, 7, 3, 1], Activation::Relu, Init::Glorot { gain: 1.0 }, &mut rng);
        assert_eq!(net.param_count(), 6 * 7 + 8 * 3 + 4);
        let mut flat = Vec::new();
        net.write_params(&mut flat);
        assert_eq!(flat.len(), net.param_count());
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = seed::rng_from(3);
        let net = DenseNet::<f64>::new(&[4, 6, 2], Activation::Tanh, Init::Glorot { gain: 1.0 }, &mut rng);
        let x = Tensor2::from_f64(3, 4, &[0.1, -0.4, 2.0, 1.0, 0.0, 0.3, -0.7, 0.9, 1.1, -1.2, 0.5, 0.25]);
        let a = net.infer(&x).unwrap();
        let b = net.trace(&x).unwrap().into_output();
        assert_eq!(a.data(), b.data());
        assert_eq!(a, net.infer(&x).unwrap());
    }

    fn net_loss(sizes: &[usize], act: Activation, seed_value: u64) -> f64 {
        let mut rng = seed::rng_from(seed_value);
        let net = DenseNet::<f64>::new(sizes, act, Init::Glorot { gain: 1.0 }, &mut rng);
        let x = Tensor2::from_f64(4, sizes[0], &(0..4 * sizes[0]).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect::<Vec<_>>());
        let target: Vec<f64> = (0..4 * sizes[sizes.len() - 1]).map(|i| (i as f64).sin()).collect();
        let mut flat = Vec::new();
        net.write_params(&mut flat);
        let report = grad_check(
            |p| {
                let mut n = net.clone();
                n.read_params(p);
                let trace = n.trace(&x)?;
                let (loss, g) = mse(trace.output().data(), &target);
                let mut grads = NetGrads::zeros_like(&n);
                n.backward_trace(&trace, Tensor2::from_vec(4, sizes[sizes.len() - 1], g), &mut grads, false)?;
                let mut out = Vec::new();
                grads.write_flat(&n, &mut out);
                Ok((loss, out))
            },
            &flat,
            1e-5,
        )
        .unwrap();
        report.max_relative_error
    }

    #[test]
    fn three_layer_gradients_match_fd() {
        for s in 0..3 {
            assert!(net_loss(&[3, 5, 4, 2], Activation::Tanh, s) < 1e-6);
            assert!(net_loss(&[3, 5, 4, 1], Activation::Identity, s) < 1e-6);
            assert!(net_loss(&[2, 6, 1], Activation::Relu, s) < 1e-4);
        }
    }

    #[test]
    fn preactivation_trace_matches_full_trace() {
        let mut rng = seed::rng_from(9);
        let net = DenseNet::<f64>::new(&[3, 4, 2], Activation::Tanh, Init::Glorot { gain: 1.0 }, &mut rng);
        let x = Tensor2::from_f64(2, 3, &[0.5, -1.0, 0.25, 2.0, 0.1, -0.3]);
        let full = net.trace(&x).unwrap();
        let pre = net.layers()[0].affine(&x);
        let partial = net.trace_from_preactivation(pre).unwrap();
        assert_eq!(full.output(), partial.output());
        let up = Tensor2::from_f64(2, 2, &[1.0, -0.5, 0.3, 0.7]);
        let mut g1 = NetGrads::zeros_like(&net);
        let mut g2 = NetGrads::zeros_like(&net);
        net.backward_trace(&full, up.clone(), &mut g1, false).unwrap();
        let dpre = net.backward_trace(&partial, up, &mut g2, false).unwrap();
        assert_eq!(g1.layers[1], g2.layers[1]);
        assert_eq!(g1.layers[0].1, g2.layers[0].1);
        // First-layer weight gradient recovered from the pre-activation gradient.
        assert!(x.t_matmul(&dpre).max_abs_diff(&g1.layers[0].0) < 1e-15);
    }
}
