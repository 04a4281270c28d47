//! Minimal reverse-mode core over a static layer graph: dense affine
//! layers, elementwise activations, softmax and squared-error loss, plus a
//! central-difference gradient checker.
//!
//! There is no general tape. Each composite model wires [`DenseNet`] traces
//! together by hand and calls [`DenseNet::backward_trace`] in reverse order.

mod dense;
mod real;
mod tensor;

pub use dense::{Activation, Dense, DenseNet, Init, NetGrads, Trace};
pub use real::{NumericMode, Real};
pub use tensor::{axpy, dot, matmul_acc, t_matmul_acc, Tensor2};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("non-finite value while evaluating {0}")]
    NonFinite(String),
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse<T: Real>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    assert_eq!(pred.len(), target.len(), "prediction/target length mismatch");
    let n = T::of(pred.len() as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let r = p - y;
            loss += r * r;
            two * r / n
        })
        .collect();
    (loss / n, grad)
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    softmax_into(logits, &mut out);
    out
}

pub fn softmax_into<T: Real>(logits: &[T], out: &mut Vec<T>) {
    out.clear();
    let Some(max) = logits.iter().copied().reduce(T::max) else {
        return;
    };
    let mut total = T::zero();
    for &l in logits {
        let e = (l - max).exp();
        total += e;
        out.push(e);
    }
    for v in out.iter_mut() {
        *v = *v / total;
    }
}

/// Gradient with respect to the logits given the softmax output `weights`
/// and the upstream gradient `dweights`.
pub fn softmax_backward<T: Real>(weights: &[T], dweights: &[T], dlogits: &mut [T]) {
    let inner: T = weights.iter().zip(dweights).map(|(&a, &g)| a * g).sum();
    for ((d, &a), &g) in dlogits.iter_mut().zip(weights).zip(dweights) {
        *d = a * (g - inner);
    }
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// max_i |a_i − n_i| / max(1, |a_i|, |n_i|)
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the analytic gradient returned by `f` with central differences
/// of step `epsilon` around `params`. `f` returns `(value, gradient)`.
pub fn grad_check<F>(mut f: F, params: &[f64], epsilon: f64) -> Result<GradCheck, NnError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), NnError>,
{
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(NnError::NonFinite("objective at the base point".into()));
    }
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let mut probe = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + epsilon;
        let (plus, _) = f(&probe)?;
        probe[i] = params[i] - epsilon;
        let (minus, _) = f(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NnError::NonFinite(format!("objective around parameter {i}")));
        }
        numeric.push((plus - minus) / (2.0 * epsilon));
    }
    let (worst_index, max_relative_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs()))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheck {
        max_relative_error,
        worst_index,
        analytic,
        numeric,
    })
}
