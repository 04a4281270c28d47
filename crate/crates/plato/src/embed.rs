//! Self-supervised node embeddings on the knowledge graph: ComplEx
//! (default), DistMult and TransE scorers trained with a binary logistic
//! loss against uniformly corrupted triples.
//!
//! ComplEx tables store `c` reals per row: the first `c/2` are real parts,
//! the last `c/2` imaginary parts.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checksum;
use crate::kg::{FeatureMapping, KnowledgeGraph, Triple};
use crate::nn::{Real, Tensor2};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMethod {
    ComplEx,
    DistMult,
    TransE,
}

impl std::str::FromStr for EmbeddingMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "complex" => Ok(EmbeddingMethod::ComplEx),
            "distmult" => Ok(EmbeddingMethod::DistMult),
            "transe" => Ok(EmbeddingMethod::TransE),
            other => Err(format!("unknown embedding method `{other}`")),
        }
    }
}

impl std::fmt::Display for EmbeddingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingMethod::ComplEx => "complex",
            EmbeddingMethod::DistMult => "distmult",
            EmbeddingMethod::TransE => "transe",
        })
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("entity {id} out of range ({count} entities)")]
    EntityOutOfRange { id: usize, count: usize },
    #[error("relation {id} out of range ({count} relations)")]
    RelationOutOfRange { id: usize, count: usize },
    #[error("invalid pretraining config: {0}")]
    Config(String),
    #[error("knowledge graph has no edges")]
    EmptyGraph,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding artifact: {0}")]
    Artifact(String),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub method: EmbeddingMethod,
    /// Embedding dimension `c`.
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    /// AdaGrad step size.
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Optional L2 penalty on the embeddings touched by a batch.
    pub l2: f64,
    /// Added to TransE's negative distance to form the logistic logit.
    pub transe_margin: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            method: EmbeddingMethod::ComplEx,
            dim: 200,
            negatives_per_positive: 4,
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 256,
            l2: 0.0,
            transe_margin: 4.0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(EmbedError::Config("dim must be at least 2".into()));
        }
        if self.method == EmbeddingMethod::ComplEx && self.dim % 2 != 0 {
            return Err(EmbedError::Config("ComplEx needs an even dim".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(EmbedError::Config("negatives_per_positive must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(EmbedError::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(EmbedError::Config("l2 must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Entity and relation embeddings of one trained scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddingTable {
    pub method: EmbeddingMethod,
    pub dim: usize,
    pub transe_margin: f64,
    pub seed: u64,
    entities: Vec<f64>,
    relations: Vec<f64>,
}

impl NodeEmbeddingTable {
    pub fn new(
        method: EmbeddingMethod,
        dim: usize,
        entities: Vec<f64>,
        relations: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || entities.len() % dim != 0 || relations.len() % dim != 0 {
            return Err(EmbedError::Artifact("table sizes are not multiples of dim".into()));
        }
        if method == EmbeddingMethod::ComplEx && dim % 2 != 0 {
            return Err(EmbedError::Config("ComplEx needs an even dim".into()));
        }
        Ok(NodeEmbeddingTable {
            method,
            dim,
            transe_margin: PretrainConfig::default().transe_margin,
            seed: 0,
            entities,
            relations,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len() / self.dim
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len() / self.dim
    }

    pub fn entity(&self, id: usize) -> &[f64] {
        &self.entities[id * self.dim..(id + 1) * self.dim]
    }

    pub fn relation(&self, id: usize) -> &[f64] {
        &self.relations[id * self.dim..(id + 1) * self.dim]
    }

    pub fn entities(&self) -> &[f64] {
        &self.entities
    }

    pub fn relations(&self) -> &[f64] {
        &self.relations
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }

    fn check(&self, h: usize, r: usize, t: usize) -> Result<()> {
        for id in [h, t] {
            if id >= self.entity_count() {
                return Err(EmbedError::EntityOutOfRange {
                    id,
                    count: self.entity_count(),
                });
            }
        }
        if r >= self.relation_count() {
            return Err(EmbedError::RelationOutOfRange {
                id: r,
                count: self.relation_count(),
            });
        }
        Ok(())
    }

    /// Plausibility of `(h, r, t)`; higher is more plausible.
    pub fn score_triple(&self, h: usize, r: usize, t: usize) -> Result<f64> {
        self.check(h, r, t)?;
        Ok(score(self.method, self.entity(h), self.relation(r), self.entity(t)))
    }

    /// Score and its gradients with respect to the three embedding rows.
    pub fn score_triple_grad(&self, h: usize, r: usize, t: usize) -> Result<(f64, ScoreGrad)> {
        self.check(h, r, t)?;
        let mut g = ScoreGrad {
            head: vec![0.0; self.dim],
            relation: vec![0.0; self.dim],
            tail: vec![0.0; self.dim],
        };
        let s = score_grad(
            self.method,
            self.entity(h),
            self.relation(r),
            self.entity(t),
            1.0,
            &mut g.head,
            &mut g.relation,
            &mut g.tail,
        );
        Ok((s, g))
    }

    /// Logit used by the logistic loss.
    pub fn logit(&self, h: usize, r: usize, t: usize) -> Result<f64> {
        let s = self.score_triple(h, r, t)?;
        Ok(match self.method {
            EmbeddingMethod::TransE => s + self.transe_margin,
            _ => s,
        })
    }

    /// Entity rows as a `|V| × c` matrix.
    pub fn entity_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            matrix: Tensor2::from_vec(self.entity_count(), self.dim, self.entities.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGrad {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

/// Scoring function of `method`.
pub fn score(method: EmbeddingMethod, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match method {
        EmbeddingMethod::ComplEx => {
            let m = h.len() / 2;
            let (hr, hi) = h.split_at(m);
            let (rr, ri) = r.split_at(m);
            let (tr, ti) = t.split_at(m);
            let mut s = 0.0;
            for k in 0..m {
                s += hr[k] * rr[k] * tr[k] + hi[k] * rr[k] * ti[k] + hr[k] * ri[k] * ti[k]
                    - hi[k] * ri[k] * tr[k];
            }
            s
        }
        EmbeddingMethod::DistMult => h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum(),
        EmbeddingMethod::TransE => {
            -h.iter()
                .zip(r)
                .zip(t)
                .map(|((a, b), c)| (a + b - c).powi(2))
                .sum::<f64>()
                .sqrt()
        }
    }
}

/// Returns the score and accumulates `scale · ∂score/∂·` into the gradient
/// rows.
#[allow(clippy::too_many_arguments)]
pub fn score_grad(
    method: EmbeddingMethod,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    scale: f64,
    gh: &mut [f64],
    gr: &mut [f64],
    gt: &mut [f64],
) -> f64 {
    match method {
        EmbeddingMethod::ComplEx => {
            let m = h.len() / 2;
            let mut s = 0.0;
            for k in 0..m {
                let (hr, hi) = (h[k], h[m + k]);
                let (rr, ri) = (r[k], r[m + k]);
                let (tr, ti) = (t[k], t[m + k]);
                s += hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr;
                gh[k] += scale * (rr * tr + ri * ti);
                gh[m + k] += scale * (rr * ti - ri * tr);
                gr[k] += scale * (hr * tr + hi * ti);
                gr[m + k] += scale * (hr * ti - hi * tr);
                gt[k] += scale * (hr * rr - hi * ri);
                gt[m + k] += scale * (hr * ri + hi * rr);
            }
            s
        }
        EmbeddingMethod::DistMult => {
            let mut s = 0.0;
            for k in 0..h.len() {
                s += h[k] * r[k] * t[k];
                gh[k] += scale * r[k] * t[k];
                gr[k] += scale * h[k] * t[k];
                gt[k] += scale * h[k] * r[k];
            }
            s
        }
        EmbeddingMethod::TransE => {
            let norm = h
                .iter()
                .zip(r)
                .zip(t)
                .map(|((a, b), c)| (a + b - c).powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                for k in 0..h.len() {
                    let u = (h[k] + r[k] - t[k]) / norm;
                    gh[k] -= scale * u;
                    gr[k] -= scale * u;
                    gt[k] += scale * u;
                }
            }
            -norm
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trains an embedding table on every edge of `kg`.
pub fn pretrain(kg: &KnowledgeGraph, cfg: &PretrainConfig) -> Result<NodeEmbeddingTable> {
    pretrain_with_history(kg, cfg).map(|(t, _)| t)
}

/// Same as [`pretrain`], also returning the mean loss per positive triple
/// for every epoch.
pub fn pretrain_with_history(
    kg: &KnowledgeGraph,
    cfg: &PretrainConfig,
) -> Result<(NodeEmbeddingTable, Vec<f64>)> {
    cfg.validate()?;
    if kg.edge_count() == 0 {
        return Err(EmbedError::EmptyGraph);
    }
    let trainer = Trainer::new(kg.node_count(), kg.relation_count(), cfg);
    trainer.run(kg.edges())
}

struct Trainer<'a> {
    cfg: &'a PretrainConfig,
    node_count: usize,
    ent: Vec<f64>,
    rel: Vec<f64>,
    ent_acc: Vec<f64>,
    rel_acc: Vec<f64>,
}

// Rows touched in the current batch and their accumulated gradients.
struct Sparse {
    dim: usize,
    grad: Vec<f64>,
    touched: Vec<usize>,
    mark: Vec<bool>,
}

impl Sparse {
    fn new(rows: usize, dim: usize) -> Self {
        Sparse {
            dim,
            grad: vec![0.0; rows * dim],
            touched: Vec::new(),
            mark: vec![false; rows],
        }
    }

    fn touch(&mut self, row: usize) {
        if !self.mark[row] {
            self.mark[row] = true;
            self.touched.push(row);
        }
    }

    fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.grad[row * self.dim..(row + 1) * self.dim]
    }
}

impl<'a> Trainer<'a> {
    fn new(node_count: usize, relation_count: usize, cfg: &'a PretrainConfig) -> Self {
        let mut rng = seed::rng(cfg.seed, "embed-init", 0);
        let bound = 0.5 / (cfg.dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n * cfg.dim).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let ent = draw(node_count);
        let rel = draw(relation_count);
        Trainer {
            cfg,
            node_count,
            ent_acc: vec![0.0; ent.len()],
            rel_acc: vec![0.0; rel.len()],
            ent,
            rel,
        }
    }

    fn run(mut self, edges: &[Triple]) -> Result<(NodeEmbeddingTable, Vec<f64>)> {
        let cfg = self.cfg;
        let dim = cfg.dim;
        let mut rng = seed::rng(cfg.seed, "embed-sgd", 0);
        let mut order: Vec<usize> = (0..edges.len()).collect();
        let mut ge = Sparse::new(self.node_count, dim);
        let mut gr = Sparse::new(self.rel.len() / dim, dim);
        let mut history = Vec::with_capacity(cfg.epochs);
        let (mut bh, mut br, mut bt) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let scale = 1.0 / chunk.len() as f64;
                let mut batch_loss = 0.0;
                for &ei in chunk {
                    let pos = edges[ei];
                    let mut examples = Vec::with_capacity(1 + cfg.negatives_per_positive);
                    examples.push((pos, 1.0));
                    for _ in 0..cfg.negatives_per_positive {
                        let replacement = crate::kg::NodeId(rng.random_range(0..self.node_count));
                        let neg = if rng.random_bool(0.5) {
                            Triple { head: replacement, ..pos }
                        } else {
                            Triple { tail: replacement, ..pos }
                        };
                        examples.push((neg, 0.0));
                    }
                    for (tr, label) in examples {
                        let (h, r, t) = (tr.head.0, tr.relation.0, tr.tail.0);
                        bh.iter_mut().for_each(|v| *v = 0.0);
                        br.iter_mut().for_each(|v| *v = 0.0);
                        bt.iter_mut().for_each(|v| *v = 0.0);
                        let s = score_grad(
                            cfg.method,
                            &self.ent[h * dim..(h + 1) * dim],
                            &self.rel[r * dim..(r + 1) * dim],
                            &self.ent[t * dim..(t + 1) * dim],
                            1.0,
                            &mut bh,
                            &mut br,
                            &mut bt,
                        );
                        let logit = match cfg.method {
                            EmbeddingMethod::TransE => s + cfg.transe_margin,
                            _ => s,
                        };
                        // d/dlogit of the logistic loss: sigmoid(logit) - label.
                        let (loss, dlogit) = if label > 0.5 {
                            (softplus(-logit), sigmoid(logit) - 1.0)
                        } else {
                            (softplus(logit), sigmoid(logit))
                        };
                        batch_loss += loss;
                        let w = dlogit * scale;
                        ge.touch(h);
                        crate::nn::axpy(w, &bh, ge.row_mut(h));
                        ge.touch(t);
                        crate::nn::axpy(w, &bt, ge.row_mut(t));
                        gr.touch(r);
                        crate::nn::axpy(w, &br, gr.row_mut(r));
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(EmbedError::Divergence { epoch, batch });
                }
                epoch_loss += batch_loss;
                self.apply(&mut ge, true);
                self.apply(&mut gr, false);
                if !self.rows_finite(&ge, &gr) {
                    return Err(EmbedError::Divergence { epoch, batch });
                }
                clear(&mut ge);
                clear(&mut gr);
            }
            history.push(epoch_loss / edges.len() as f64);
        }
        let table = NodeEmbeddingTable {
            method: cfg.method,
            dim,
            transe_margin: cfg.transe_margin,
            seed: cfg.seed,
            entities: self.ent,
            relations: self.rel,
        };
        Ok((table, history))
    }

    fn rows_finite(&self, ge: &Sparse, gr: &Sparse) -> bool {
        let dim = self.cfg.dim;
        ge.touched
            .iter()
            .all(|&row| self.ent[row * dim..(row + 1) * dim].iter().all(|v| v.is_finite()))
            && gr
                .touched
                .iter()
                .all(|&row| self.rel[row * dim..(row + 1) * dim].iter().all(|v| v.is_finite()))
    }

    /// AdaGrad step on the touched rows.
    fn apply(&mut self, g: &mut Sparse, entities: bool) {
        let dim = self.cfg.dim;
        let (lr, l2) = (self.cfg.learning_rate, self.cfg.l2);
        let (params, acc) = if entities {
            (&mut self.ent, &mut self.ent_acc)
        } else {
            (&mut self.rel, &mut self.rel_acc)
        };
        for &row in &g.touched {
            let range = row * dim..(row + 1) * dim;
            let grad = &g.grad[range.clone()];
            for ((p, a), &d) in params[range.clone()].iter_mut().zip(&mut acc[range]).zip(grad) {
                let d = d + 2.0 * l2 * *p;
                *a += d * d;
                *p -= lr * d / (a.sqrt() + 1e-10);
            }
        }
    }
}

fn clear(g: &mut Sparse) {
    for &row in &g.touched {
        g.mark[row] = false;
        g.grad[row * g.dim..(row + 1) * g.dim]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    g.touched.clear();
}

/// Frozen `d × c` feature-embedding matrix. There is no mutable access:
/// models hold it behind an `Arc` and never write to it.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    matrix: Tensor2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(matrix: Tensor2<f64>) -> Self {
        EmbeddingMatrix { matrix }
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.matrix.row(j)
    }

    pub fn as_f64(&self) -> &Tensor2<f64> {
        &self.matrix
    }

    pub fn to_real<T: Real>(&self) -> Tensor2<T> {
        self.matrix.cast()
    }

    /// Digest of the raw little-endian f64 values.
    pub fn checksum(&self) -> String {
        let bytes: Vec<u8> = self
            .matrix
            .data()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        checksum::sha256_hex(&bytes)
    }
}

/// Row `j` of the result is the entity embedding of feature `j`'s node.
pub fn extract_feature_embeddings(table: &NodeEmbeddingTable, fm: &FeatureMapping) -> EmbeddingMatrix {
    let mut data = Vec::with_capacity(fm.len() * table.dim);
    for node in fm.nodes() {
        data.extend_from_slice(table.entity(node.0));
    }
    EmbeddingMatrix::new(Tensor2::from_vec(fm.len(), table.dim, data))
}

/// Probability that a positive outscores a negative, ties counting one
/// half (rank-sum form).
pub fn ranking_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    assert!(!positives.is_empty() && !negatives.is_empty(), "AUC needs both classes");
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * all[i..=j].iter().filter(|(_, p)| *p).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Held-out link-prediction AUC: every held-out triple against
/// `negatives_per_positive` uniformly corrupted copies of itself.
pub fn held_out_auc(
    table: &NodeEmbeddingTable,
    held_out: &[Triple],
    negatives_per_positive: usize,
    seed_value: u64,
) -> Result<f64> {
    let mut rng = seed::rng(seed_value, "auc-negatives", 0);
    let n = table.entity_count();
    let mut pos = Vec::with_capacity(held_out.len());
    let mut neg = Vec::with_capacity(held_out.len() * negatives_per_positive);
    for t in held_out {
        pos.push(table.score_triple(t.head.0, t.relation.0, t.tail.0)?);
        for _ in 0..negatives_per_positive {
            let other = rng.random_range(0..n);
            let s = if rng.random_bool(0.5) {
                table.score_triple(other, t.relation.0, t.tail.0)?
            } else {
                table.score_triple(t.head.0, t.relation.0, other)?
            };
            neg.push(s);
        }
    }
    Ok(ranking_auc(&pos, &neg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub method: EmbeddingMethod,
    pub c: usize,
    pub node_count: usize,
    pub relation_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub transe_margin: Option<f64>,
    pub entities_file: String,
    pub relations_file: String,
    pub entities_sha256: String,
    pub relations_sha256: String,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io {
        path: path.to_owned(),
        source,
    }
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

/// Writes `<stem>.json`, `<stem>.entities.f32` and `<stem>.relations.f32`
/// into `dir`; returns the manifest path.
pub fn save_table(table: &NodeEmbeddingTable, dir: &Path, stem: &str) -> Result<PathBuf> {
    let ent_name = format!("{stem}.entities.f32");
    let rel_name = format!("{stem}.relations.f32");
    let ent = f32_bytes(&table.entities);
    let rel = f32_bytes(&table.relations);
    for (name, bytes) in [(&ent_name, &ent), (&rel_name, &rel)] {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    let manifest = EmbeddingManifest {
        method: table.method,
        c: table.dim,
        node_count: table.entity_count(),
        relation_count: table.relation_count(),
        seed: table.seed,
        transe_margin: Some(table.transe_margin),
        entities_sha256: checksum::sha256_hex(&ent),
        relations_sha256: checksum::sha256_hex(&rel),
        entities_file: ent_name,
        relations_file: rel_name,
    };
    let path = dir.join(format!("{stem}.json"));
    let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(&mut f, &manifest)
        .map_err(|e| EmbedError::Artifact(e.to_string()))?;
    f.write_all(b"\n").map_err(io_err(&path))?;
    Ok(path)
}

fn read_f32(path: &Path, expected: usize, checksum_hex: &str) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 4 {
        return Err(EmbedError::Artifact(format!(
            "{}: expected {} float32 values, found {} bytes",
            path.display(),
            expected,
            bytes.len()
        )));
    }
    if checksum::sha256_hex(&bytes) != checksum_hex {
        return Err(EmbedError::Artifact(format!("{}: checksum mismatch", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Loads a table written by [`save_table`], validating sizes and checksums.
pub fn load_table(manifest_path: &Path) -> Result<NodeEmbeddingTable> {
    let text = std::fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let m: EmbeddingManifest =
        serde_json::from_str(&text).map_err(|e| EmbedError::Artifact(e.to_string()))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let entities = read_f32(&dir.join(&m.entities_file), m.node_count * m.c, &m.entities_sha256)?;
    let relations = read_f32(&dir.join(&m.relations_file), m.relation_count * m.c, &m.relations_sha256)?;
    let mut table = NodeEmbeddingTable::new(m.method, m.c, entities, relations)?;
    table.seed = m.seed;
    if let Some(margin) = m.transe_margin {
        table.transe_margin = margin;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use proptest::prelude::*;

    fn table(method: EmbeddingMethod, dim: usize, ent: &[f64], rel: &[f64]) -> NodeEmbeddingTable {
        NodeEmbeddingTable::new(method, dim, ent.to_vec(), rel.to_vec()).unwrap()
    }

    #[test]
    fn complex_unit_embeddings() {
        // c = 2: one complex coordinate (re, im).
        let t = table(EmbeddingMethod::ComplEx, 2, &[1.0, 0.0, 1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(t.score_triple(0, 0, 1).unwrap(), 1.0);
        // e_h = i, w_r = 1, e_t = i: Re(i · 1 · conj(i)) = 1.
        let t = table(EmbeddingMethod::ComplEx, 2, &[0.0, 1.0, 0.0, 1.0], &[1.0, 0.0]);
        assert_eq!(t.score_triple(0, 0, 1).unwrap(), 1.0);
    }

    #[test]
    fn transe_exact_translation_scores_zero() {
        let t = table(EmbeddingMethod::TransE, 2, &[0.5, -1.0, 1.5, 1.0], &[1.0, 2.0]);
        assert_eq!(t.score_triple(0, 0, 1).unwrap(), 0.0);
        assert!(t.score_triple(1, 0, 0).unwrap() < 0.0);
    }

    #[test]
    fn out_of_range_ids() {
        let t = table(EmbeddingMethod::DistMult, 2, &[1.0; 4], &[1.0; 2]);
        assert!(matches!(t.score_triple(2, 0, 0), Err(EmbedError::EntityOutOfRange { .. })));
        assert!(matches!(t.score_triple(0, 1, 0), Err(EmbedError::RelationOutOfRange { .. })));
    }

    fn random_rows(seed_value: u64, n: usize) -> Vec<f64> {
        let mut rng = seed::rng_from(seed_value);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        for method in [EmbeddingMethod::ComplEx, EmbeddingMethod::DistMult, EmbeddingMethod::TransE] {
            for s in 0..5 {
                let p = random_rows(s, 12);
                let r = grad_check(
                    |p| {
                        let (h, rest) = p.split_at(4);
                        let (r, t) = rest.split_at(4);
                        let mut g = vec![0.0; 12];
                        let (gh, rest) = g.split_at_mut(4);
                        let (gr, gt) = rest.split_at_mut(4);
                        let v = score_grad(method, h, r, t, 1.0, gh, gr, gt);
                        Ok((v, g))
                    },
                    &p,
                    1e-5,
                )
                .unwrap();
                assert!(r.max_relative_error < 1e-6, "{method}: {}", r.max_relative_error);
            }
        }
    }

    proptest! {
        #[test]
        fn complex_conjugation_invariance(p in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let conj = |v: &[f64]| -> Vec<f64> {
                v[..2].iter().copied().chain(v[2..].iter().map(|x| -x)).collect()
            };
            let (h, r, t) = (&p[0..4], &p[4..8], &p[8..12]);
            let a = score(EmbeddingMethod::ComplEx, h, r, t);
            let b = score(EmbeddingMethod::ComplEx, &conj(h), &conj(r), &conj(t));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    fn two_node() -> KnowledgeGraph {
        KnowledgeGraph::from_labeled(&[("a", "r", "b")]).unwrap()
    }

    #[test]
    fn two_node_smoke() {
        let cfg = PretrainConfig {
            dim: 8,
            epochs: 200,
            batch_size: 1,
            negatives_per_positive: 256,
            seed: 5,
            ..PretrainConfig::default()
        };
        let (t, history) = pretrain_with_history(&two_node(), &cfg).unwrap();
        assert!(t.is_finite());
        let observed = t.score_triple(0, 0, 1).unwrap();
        // Self-corruptions are never observed (self-loops are invalid).
        assert!(t.score_triple(0, 0, 0).unwrap() < observed);
        assert!(t.score_triple(1, 0, 1).unwrap() < observed);
        let tail = &history[history.len() * 9 / 10..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] + 0.1 * w[0], "{w:?}");
        }
        assert_eq!(t, pretrain(&two_node(), &cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        let kg = two_node();
        let odd = PretrainConfig { dim: 3, ..PretrainConfig::default() };
        assert!(matches!(pretrain(&kg, &odd), Err(EmbedError::Config(_))));
        let none = PretrainConfig { negatives_per_positive: 0, ..PretrainConfig::default() };
        assert!(matches!(pretrain(&kg, &none), Err(EmbedError::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = PretrainConfig {
            method: EmbeddingMethod::DistMult,
            dim: 4,
            learning_rate: f64::MAX,
            epochs: 5,
            ..PretrainConfig::default()
        };
        match pretrain(&two_node(), &cfg) {
            Err(EmbedError::Divergence { epoch, batch }) => assert!(epoch < 5 && batch == 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extract_rows() {
        let t = table(EmbeddingMethod::DistMult, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0.0, 0.0]);
        let kg = KnowledgeGraph::from_labeled(&[("a", "r", "b"), ("b", "r", "c")]).unwrap();
        let fm = FeatureMapping::from_labels(&[("x", "a")], &kg).unwrap();
        assert_eq!(extract_feature_embeddings(&t, &fm).row(0), [1.0, 2.0]);
        let fm = FeatureMapping::from_labels(&[("z", "c"), ("x", "a")], &kg).unwrap();
        let m = extract_feature_embeddings(&t, &fm);
        assert_eq!(m.row(0), [5.0, 6.0]);
        assert_eq!(m.row(1), [1.0, 2.0]);
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let pos = random_rows(11, 40);
        let mut neg = random_rows(12, 70);
        neg[3] = pos[5];
        neg[4] = pos[5];
        let oracle = {
            let mut wins = 0.0;
            for p in &pos {
                for n in &neg {
                    wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
                }
            }
            wins / (pos.len() * neg.len()) as f64
        };
        assert!((ranking_auc(&pos, &neg) - oracle).abs() < 1e-12);
        assert_eq!(ranking_auc(&[2.0], &[1.0]), 1.0);
        assert_eq!(ranking_auc(&[1.0], &[1.0]), 0.5);
    }

    #[test]
    fn artifact_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PretrainConfig { dim: 4, epochs: 3, seed: 2, ..PretrainConfig::default() };
        let t = pretrain(&two_node(), &cfg).unwrap();
        let path = save_table(&t, dir.path(), "emb").unwrap();
        let back = load_table(&path).unwrap();
        assert_eq!(back.method, t.method);
        assert_eq!(back.entity_count(), 2);
        for (a, b) in back.entities().iter().zip(t.entities()) {
            assert_eq!(*a, (*b as f32) as f64);
        }
        std::fs::write(dir.path().join("emb.entities.f32"), [0u8; 12]).unwrap();
        assert!(matches!(load_table(&path), Err(EmbedError::Artifact(_))));
    }
}
