//! Sample-conditioned attention message passing over the feature graph.

use crate::kg::{FeatureMapping, KnowledgeGraph, Neighborhoods};
use crate::nn::{axpy, dot, softmax_backward, softmax_into, Activation, DenseNet, NetGrads, Real, Tensor2};

use super::ModelError;

/// Graph on which message passing runs, plus the node of every feature.
///
/// By default the nodes are exactly the features, in feature order. With
/// non-feature imputation the nodes are all KG nodes and non-feature nodes
/// carry the value 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGraph {
    neighborhoods: Neighborhoods,
    feature_nodes: Vec<usize>,
}

impl FeatureGraph {
    pub fn new(neighborhoods: Neighborhoods, feature_nodes: Vec<usize>) -> Result<Self, ModelError> {
        let n = neighborhoods.node_count();
        let mut seen = vec![false; n];
        for &v in &feature_nodes {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(ModelError::Config(format!(
                    "feature node {v} is out of range or mapped twice"
                )));
            }
        }
        Ok(FeatureGraph {
            neighborhoods,
            feature_nodes,
        })
    }

    /// Induced subgraph on feature nodes, in feature order.
    pub fn feature_subgraph(kg: &KnowledgeGraph, fm: &FeatureMapping) -> Self {
        let sub = kg.induce_feature_subgraph(fm);
        FeatureGraph {
            neighborhoods: sub.neighborhoods(),
            feature_nodes: (0..fm.len()).collect(),
        }
    }

    /// Every KG node takes part; non-feature nodes get the value 0.
    pub fn whole_graph(kg: &KnowledgeGraph, fm: &FeatureMapping) -> Self {
        FeatureGraph {
            neighborhoods: kg.neighborhoods(),
            feature_nodes: fm.nodes().iter().map(|n| n.0).collect(),
        }
    }

    /// `d` features with no edges.
    pub fn isolated(d: usize) -> Self {
        FeatureGraph {
            neighborhoods: Neighborhoods::from_pairs(d, &[]),
            feature_nodes: (0..d).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.neighborhoods.node_count()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_nodes.len()
    }

    pub fn neighborhoods(&self) -> &Neighborhoods {
        &self.neighborhoods
    }

    pub fn feature_nodes(&self) -> &[usize] {
        &self.feature_nodes
    }

    /// Sample values placed on graph nodes.
    pub fn node_values<T: Real>(&self, x_row: &[T]) -> Vec<T> {
        let mut v = vec![T::zero(); self.node_count()];
        for (&node, &x) in self.feature_nodes.iter().zip(x_row) {
            v[node] = x;
        }
        v
    }

    /// `slot_count × 2` attention inputs `(x_j, x_k)` for every neighbor
    /// slot `j → k`.
    pub fn attention_inputs<T: Real>(&self, values: &[T]) -> Tensor2<T> {
        let nb = &self.neighborhoods;
        let mut data = Vec::with_capacity(2 * nb.slot_count());
        for j in 0..nb.node_count() {
            for &k in nb.of(j) {
                data.push(values[j]);
                data.push(values[k]);
            }
        }
        Tensor2::from_vec(nb.slot_count(), 2, data)
    }

    /// Rows of `states` at feature nodes, in feature order.
    pub fn feature_rows<T: Real>(&self, states: &Tensor2<T>) -> Tensor2<T> {
        let mut out = Vec::with_capacity(self.feature_count() * states.cols());
        for &v in &self.feature_nodes {
            out.extend_from_slice(states.row(v));
        }
        Tensor2::from_vec(self.feature_count(), states.cols(), out)
    }
}

/// Hidden activations and logits of the attention net over every slot.
#[derive(Clone, Debug)]
pub(crate) struct AttentionTrace<T> {
    hidden: Vec<T>,
    pub logits: Vec<T>,
}

/// Evaluates the `[2, hA, 1]` attention net on every slot `(x_j, x_k)`
/// without materializing the slot inputs.
pub(crate) fn attention_forward<T: Real>(net: &DenseNet<T>, nb: &Neighborhoods, values: &[T]) -> AttentionTrace<T> {
    let [l1, l2] = net.layers() else {
        panic!("attention net has two layers");
    };
    let ha = l1.outputs();
    let (wj, wk, b1) = (l1.weight.row(0), l1.weight.row(1), &l1.bias[..]);
    let v: Vec<T> = (0..ha).map(|q| l2.weight.get(q, 0)).collect();
    let b2 = l2.bias[0];
    let mut hidden = vec![T::zero(); nb.slot_count() * ha];
    let mut logits = Vec::with_capacity(nb.slot_count());
    let mut pre = vec![T::zero(); ha];
    let mut s = 0;
    for j in 0..nb.node_count() {
        let xj = values[j];
        for (p, (&a, &b)) in pre.iter_mut().zip(wj.iter().zip(b1)) {
            *p = a * xj + b;
        }
        for &k in nb.of(j) {
            let xk = values[k];
            let h = &mut hidden[s * ha..(s + 1) * ha];
            for (t, (&p, &w)) in h.iter_mut().zip(pre.iter().zip(wk)) {
                *t = (p + w * xk).act_tanh();
            }
            logits.push(b2 + dot(h, &v));
            s += 1;
        }
    }
    AttentionTrace { hidden, logits }
}

/// Accumulates parameter gradients of [`attention_forward`] given
/// `∂/∂logits`.
pub(crate) fn attention_backward<T: Real>(
    net: &DenseNet<T>,
    nb: &Neighborhoods,
    values: &[T],
    trace: &AttentionTrace<T>,
    dlogits: &[T],
    grads: &mut NetGrads<T>,
) {
    let ha = net.layers()[0].outputs();
    let v: Vec<T> = (0..ha).map(|q| net.layers()[1].weight.get(q, 0)).collect();
    let mut gj = vec![T::zero(); ha];
    let mut gk = vec![T::zero(); ha];
    let mut gb1 = vec![T::zero(); ha];
    let mut gv = vec![T::zero(); ha];
    let mut gb2 = T::zero();
    let mut dpre = vec![T::zero(); ha];
    let mut s = 0;
    for j in 0..nb.node_count() {
        let xj = values[j];
        dpre.iter_mut().for_each(|d| *d = T::zero());
        for &k in nb.of(j) {
            let dl = dlogits[s];
            let h = &trace.hidden[s * ha..(s + 1) * ha];
            gb2 += dl;
            let xk = values[k];
            axpy(dl, h, &mut gv);
            for (((d, g), &t), &vq) in dpre.iter_mut().zip(gk.iter_mut()).zip(h).zip(&v) {
                let dp = dl * vq * (T::one() - t * t);
                *d += dp;
                *g += dp * xk;
            }
            s += 1;
        }
        for q in 0..ha {
            gj[q] += dpre[q] * xj;
            gb1[q] += dpre[q];
        }
    }
    let (w1, b1) = &mut grads.layers[0];
    axpy(T::one(), &gj, w1.row_mut(0));
    axpy(T::one(), &gk, w1.row_mut(1));
    axpy(T::one(), &gb1, b1);
    let (w2, b2) = &mut grads.layers[1];
    axpy(T::one(), &gv, w2.data_mut());
    b2[0] += gb2;
}

/// Softmax over one node's neighbor logits.
///
/// # Panics
/// On an empty list; isolated nodes have no attention weights.
pub fn attention_weights<T: Real>(logits: &[T]) -> Vec<T> {
    assert!(!logits.is_empty(), "attention over an empty neighborhood");
    let mut out = Vec::with_capacity(logits.len());
    softmax_into(logits, &mut out);
    out
}

/// Per-node softmax of slot logits.
pub(crate) fn normalize_slots<T: Real>(nb: &Neighborhoods, logits: &[T], alpha: &mut Vec<T>) {
    alpha.clear();
    let mut buf = Vec::new();
    for j in 0..nb.node_count() {
        let slots = &logits[nb.offsets[j]..nb.offsets[j + 1]];
        if !slots.is_empty() {
            softmax_into(slots, &mut buf);
            alpha.extend_from_slice(&buf);
        }
    }
}

pub(crate) fn normalize_slots_backward<T: Real>(
    nb: &Neighborhoods,
    alpha: &[T],
    dalpha: &[T],
    dlogits: &mut [T],
) {
    for j in 0..nb.node_count() {
        let r = nb.offsets[j]..nb.offsets[j + 1];
        if !r.is_empty() {
            softmax_backward(&alpha[r.clone()], &dalpha[r.clone()], &mut dlogits[r]);
        }
    }
}

/// Runs `rounds` updates
/// `P[j] ← σ((1 − β)·P[j] + β·Σ_k α_jk·P[k])` starting from `p0`, returning
/// every state. Isolated nodes keep only the self term. With `β = 0` the
/// neighbor term is skipped so identity rounds reproduce `p0` bitwise.
pub fn propagate<T: Real>(
    nb: &Neighborhoods,
    alpha: &[T],
    beta: T,
    sigma: Activation,
    p0: Tensor2<T>,
    rounds: usize,
) -> Vec<Tensor2<T>> {
    let mut states = Vec::with_capacity(rounds + 1);
    states.push(p0);
    let keep = T::one() - beta;
    for _ in 0..rounds {
        let prev = states.last().expect("at least the initial state");
        let mut next = Tensor2::zeros(prev.rows(), prev.cols());
        for j in 0..nb.node_count() {
            let row = next.row_mut(j);
            if beta == T::zero() {
                row.copy_from_slice(prev.row(j));
            } else {
                for (o, &p) in row.iter_mut().zip(prev.row(j)) {
                    *o = keep * p;
                }
                for s in nb.offsets[j]..nb.offsets[j + 1] {
                    axpy(beta * alpha[s], prev.row(nb.targets[s]), row);
                }
            }
        }
        sigma.apply_in_place(next.data_mut());
        states.push(next);
    }
    states
}

/// Reverse of [`propagate`]: given the gradient at the last state returns
/// the gradient at the initial state and accumulates `∂/∂α` into `dalpha`.
pub fn propagate_backward<T: Real>(
    nb: &Neighborhoods,
    alpha: &[T],
    beta: T,
    sigma: Activation,
    states: &[Tensor2<T>],
    d_last: Tensor2<T>,
    dalpha: &mut [T],
) -> Tensor2<T> {
    let keep = T::one() - beta;
    let mut d = d_last;
    for r in (1..states.len()).rev() {
        sigma.backprop_in_place(states[r].data(), d.data_mut());
        let prev = &states[r - 1];
        let mut dprev = Tensor2::zeros(prev.rows(), prev.cols());
        for j in 0..nb.node_count() {
            if beta == T::zero() {
                axpy(T::one(), d.row(j), dprev.row_mut(j));
                continue;
            }
            axpy(keep, d.row(j), dprev.row_mut(j));
            for s in nb.offsets[j]..nb.offsets[j + 1] {
                let k = nb.targets[s];
                dalpha[s] += beta * dot(d.row(j), prev.row(k));
                axpy(beta * alpha[s], d.row(j), dprev.row_mut(k));
            }
        }
        d = dprev;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_weight_cases() {
        assert_eq!(attention_weights(&[3.0f64]), [1.0]);
        let w = attention_weights(&[0.0f64, 0.0, 0.0]);
        assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = attention_weights(&[2f64.ln(), 0.0]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "empty neighborhood")]
    fn empty_attention_panics() {
        attention_weights::<f64>(&[]);
    }

    #[test]
    fn two_node_hand_example() {
        let nb = Neighborhoods::from_pairs(2, &[(0, 1)]);
        let m = Tensor2::from_rows(&[vec![1.0f64, 0.0], vec![0.0, 1.0]]);
        let states = propagate(&nb, &[1.0, 1.0], 0.5, Activation::Identity, m, 1);
        assert_eq!(states[1].data(), [0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn isolated_node_keeps_scaled_self_term() {
        let nb = Neighborhoods::from_pairs(2, &[]);
        let m = Tensor2::from_rows(&[vec![2.0f64], vec![4.0]]);
        let states = propagate(&nb, &[], 0.25, Activation::Identity, m, 2);
        assert_eq!(states[2].data(), [2.0 * 0.75 * 0.75, 4.0 * 0.75 * 0.75]);
    }

    #[test]
    fn feature_graph_rejects_bad_nodes() {
        let nb = Neighborhoods::from_pairs(3, &[(0, 1)]);
        assert!(FeatureGraph::new(nb.clone(), vec![0, 3]).is_err());
        assert!(FeatureGraph::new(nb.clone(), vec![1, 1]).is_err());
        let g = FeatureGraph::new(nb, vec![2, 0]).unwrap();
        assert_eq!(g.node_values(&[5.0f64, 7.0]), [7.0, 0.0, 5.0]);
    }
}
