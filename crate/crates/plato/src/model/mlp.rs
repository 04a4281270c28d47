//! Plain MLP with a fully trainable `d × h` first layer.

use crate::nn::{mse, Activation, DenseNet, Init, NetGrads, Real, Tensor2};
use crate::seed;

use super::{ModelError, Regressor, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T: Real> {
    net: DenseNet<T>,
}

impl<T: Real> MlpModel<T> {
    /// Same depth convention as the inferred-weight model: `layers` counts
    /// the first layer, hidden widths are all `hidden`, and `layers = 1`
    /// gives a linear model.
    pub fn new(d: usize, hidden: usize, layers: usize, activation: Activation, seed_value: u64) -> Result<Self> {
        if d == 0 || hidden == 0 || layers == 0 {
            return Err(ModelError::Config("d, hidden and layers must be positive".into()));
        }
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(hidden, layers.max(2) - 1));
        sizes.push(1);
        let act = if layers == 1 { Activation::Identity } else { activation };
        let mut rng = seed::rng(seed_value, "mlp-init", 0);
        Ok(MlpModel {
            net: DenseNet::new(&sizes, act, Init::Glorot { gain: 1.0 }, &mut rng),
        })
    }

    pub fn from_net(net: DenseNet<T>) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(ModelError::Config("MLP must have a single output".into()));
        }
        Ok(MlpModel { net })
    }

    pub fn net(&self) -> &DenseNet<T> {
        &self.net
    }

    /// `(d + 1) · h`.
    pub fn first_layer_count(&self) -> usize {
        self.net.layers()[0].param_count()
    }
}

impl<T: Real> Regressor<T> for MlpModel<T> {
    fn param_count(&self) -> usize {
        self.net.trainable_param_count()
    }

    fn write_params(&self, out: &mut Vec<T>) {
        self.net.write_params(out);
    }

    fn read_params(&mut self, src: &[T]) {
        assert_eq!(src.len(), self.param_count(), "parameter vector length");
        self.net.read_params(src);
    }

    fn loss_grad(&self, x: &Tensor2<T>, y: &[T], grad: &mut Vec<T>) -> Result<T> {
        let trace = self.net.trace(x)?;
        let (loss, dy) = mse(trace.output().data(), y);
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("loss".into()));
        }
        let mut g = NetGrads::zeros_like(&self.net);
        self.net
            .backward_trace(&trace, Tensor2::from_vec(y.len(), 1, dy), &mut g, false)?;
        grad.clear();
        g.write_flat(&self.net, grad);
        Ok(loss)
    }

    fn predict(&self, x: &Tensor2<T>) -> Result<Vec<T>> {
        Ok(self.net.infer(x)?.into_data())
    }
}
