//! Synthetic benchmark whose true first-layer weights vary smoothly over an
//! auxiliary graph.
//!
//! Features belong to communities. Each feature has a latent vector drawn
//! around its community mean; its true weight vector is a fixed linear map
//! of that latent. Feature pairs are linked with probability `p_intra`
//! inside a community and `p_inter` across, and broader-domain hub nodes
//! tie each community together, so community identity is recoverable from
//! the graph alone. Labels are `tanh(X Θ*) v* + ε`.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TabularDataset};
use crate::kg::{self, FeatureMapping, KgError, KnowledgeGraph, NodeId, Triple};
use crate::nn::Tensor2;
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    pub n: usize,
    pub c_latent: usize,
    pub h_true: usize,
    pub n_communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Broader-domain hub nodes; hub `k` is linked to every feature of
    /// community `k mod n_communities`.
    pub n_broader: usize,
    /// Relation types used for feature–feature edges.
    pub n_feature_relations: usize,
    /// Standard deviation of a feature's latent around its community mean.
    pub within_spread: f64,
    /// Standard deviation of each `(X Θ*)_k` before the tanh.
    pub signal_gain: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 2000,
            n: 100,
            c_latent: 8,
            h_true: 4,
            n_communities: 4,
            p_intra: 0.01,
            p_inter: 0.0005,
            n_broader: 12,
            n_feature_relations: 3,
            within_spread: 0.3,
            signal_gain: 1.5,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::Config(m.to_owned()));
        if self.d == 0 {
            return fail("d must be positive");
        }
        if self.n == 0 {
            return fail("n must be positive");
        }
        if self.n_communities == 0 || self.n_communities > self.d {
            return fail("n_communities must be in 1..=d");
        }
        if self.c_latent == 0 || self.h_true == 0 {
            return fail("c_latent and h_true must be positive");
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self.p_intra < self.p_inter {
            return fail("p_intra must be at least p_inter");
        }
        if self.n_broader < self.n_communities {
            return fail("n_broader must be at least n_communities so no feature is isolated");
        }
        if self.n_feature_relations == 0 {
            return fail("n_feature_relations must be positive");
        }
        for (name, v) in [
            ("within_spread", self.within_spread),
            ("signal_gain", self.signal_gain),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Generative quantities kept for test oracles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub community: Vec<usize>,
    /// `d × c_latent`, row-major.
    pub latent: Vec<Vec<f64>>,
    /// `d × h_true`, row-major.
    pub theta: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub n: usize,
    pub feature_edges: usize,
    pub broader_edges: usize,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub dataset: TabularDataset,
    pub kg: KnowledgeGraph,
    pub feature_map: FeatureMapping,
    pub truth: GroundTruth,
}

pub const LABEL: &str = "target";

fn feature_name(j: usize) -> String {
    format!("f{j:05}")
}

fn normal(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let d = cfg.d;
    let community: Vec<usize> = (0..d).map(|j| j * cfg.n_communities / d).collect();

    let mut rng = seed::rng(cfg.seed, "synth-latent", 0);
    let means: Vec<Vec<f64>> = (0..cfg.n_communities)
        .map(|_| (0..cfg.c_latent).map(|_| normal(&mut rng)).collect())
        .collect();
    let latent: Vec<Vec<f64>> = community
        .iter()
        .map(|&g| {
            means[g]
                .iter()
                .map(|m| m + cfg.within_spread * normal(&mut rng))
                .collect()
        })
        .collect();
    let map: Vec<Vec<f64>> = (0..cfg.h_true)
        .map(|_| (0..cfg.c_latent).map(|_| normal(&mut rng)).collect())
        .collect();
    let mut theta: Vec<Vec<f64>> = latent
        .iter()
        .map(|z| map.iter().map(|w| crate::nn::dot(w, z)).collect())
        .collect();
    // Column k gets Σ_j θ_jk² = gain², so (X θ)_k has standard deviation gain.
    for k in 0..cfg.h_true {
        let norm = theta.iter().map(|t| t[k] * t[k]).sum::<f64>().sqrt();
        if norm > 0.0 {
            theta.iter_mut().for_each(|t| t[k] *= cfg.signal_gain / norm);
        }
    }
    let v: Vec<f64> = (0..cfg.h_true).map(|_| normal(&mut rng)).collect();

    // Graph.
    let mut grng = seed::rng(cfg.seed, "synth-graph", 0);
    let mut labels: Vec<String> = (0..d).map(|j| format!("node:{}", feature_name(j))).collect();
    let mut relations: Vec<String> = (0..cfg.n_feature_relations)
        .map(|r| format!("interacts_{r}"))
        .collect();
    let mut edges = Vec::new();
    let (mut intra_pairs, mut inter_pairs) = (0, 0);
    for a in 0..d {
        for b in a + 1..d {
            let same = community[a] == community[b];
            if same {
                intra_pairs += 1;
            } else {
                inter_pairs += 1;
            }
            let p = if same { cfg.p_intra } else { cfg.p_inter };
            if p > 0.0 && grng.random_bool(p) {
                let r = grng.random_range(0..cfg.n_feature_relations);
                edges.push(if grng.random_bool(0.5) {
                    Triple::new(a, r, b)
                } else {
                    Triple::new(b, r, a)
                });
            }
        }
    }
    let feature_edges = edges.len();
    for k in 0..cfg.n_broader {
        let hub = labels.len();
        labels.push(format!("domain:{k:03}"));
        let rel = relations.len();
        relations.push(format!("annotates_{k:03}"));
        let g = k % cfg.n_communities;
        for (j, _) in community.iter().enumerate().filter(|(_, c)| **c == g) {
            edges.push(Triple::new(hub, rel, j));
        }
    }
    let broader_edges = edges.len() - feature_edges;
    let graph = KnowledgeGraph::new(labels, relations, edges)?;
    // Reintern through labels so ids match what `load_kg` assigns.
    let named: Vec<(String, String, String)> = graph
        .edges()
        .iter()
        .map(|e| {
            (
                graph.node_label(e.head).to_owned(),
                graph.relation_labels()[e.relation.0].clone(),
                graph.node_label(e.tail).to_owned(),
            )
        })
        .collect();
    let kg = KnowledgeGraph::from_labeled(&named)?;
    let pairs: Vec<(String, String)> = (0..d)
        .map(|j| (feature_name(j), graph.node_label(NodeId(j)).to_owned()))
        .collect();
    let feature_map = FeatureMapping::from_labels(&pairs, &kg)?;

    // Samples.
    let mut xrng = seed::rng(cfg.seed, "synth-samples", 0);
    let mut x = Vec::with_capacity(cfg.n * d);
    let mut y = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let row: Vec<f64> = (0..d).map(|_| normal(&mut xrng)).collect();
        let mut label = 0.0;
        for k in 0..cfg.h_true {
            let pre: f64 = row.iter().zip(&theta).map(|(xj, t)| xj * t[k]).sum();
            label += pre.tanh() * v[k];
        }
        y.push(label + cfg.noise_std * normal(&mut xrng));
        x.extend(row);
    }
    let dataset = TabularDataset::new(
        Tensor2::from_vec(cfg.n, d, x),
        y,
        (0..d).map(feature_name).collect(),
        (0..cfg.n).map(|i| format!("s{i:05}")).collect(),
    )?;
    Ok(SynthOutput {
        dataset,
        kg,
        feature_map,
        truth: GroundTruth {
            community,
            latent,
            theta,
            v,
            n: cfg.n,
            feature_edges,
            broader_edges,
            intra_pairs,
            inter_pairs,
        },
    })
}

/// Paths of the files written by [`write_files`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthFiles {
    pub triples: PathBuf,
    pub feature_map: PathBuf,
    pub dataset: PathBuf,
    pub ground_truth: PathBuf,
}

pub fn write_files(out: &SynthOutput, dir: &Path) -> Result<SynthFiles, SynthError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let files = SynthFiles {
        triples: dir.join("kg.tsv"),
        feature_map: dir.join("feature_map.tsv"),
        dataset: dir.join("dataset.csv"),
        ground_truth: dir.join("ground_truth.json"),
    };
    kg::write_triples(&files.triples, &out.kg)?;
    kg::write_feature_map(&files.feature_map, &out.kg, &out.feature_map)?;
    out.dataset.write_csv(&files.dataset, LABEL)?;
    let json = serde_json::to_vec(&out.truth).expect("ground truth serializes");
    std::fs::write(&files.ground_truth, json).map_err(io(&files.ground_truth))?;
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub within_cosine: f64,
    pub between_cosine: f64,
    pub feature_edges: usize,
    pub broader_edges: usize,
    pub d_over_n: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = crate::nn::dot(a, a).sqrt();
    let nb = crate::nn::dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        crate::nn::dot(a, b) / (na * nb)
    }
}

/// Mean pairwise cosine similarity of true weight vectors within and
/// between communities, edge counts and `d / n`.
pub fn describe(truth: &GroundTruth) -> SynthSummary {
    let d = truth.theta.len();
    let (mut within, mut wn, mut between, mut bn) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..d {
        for b in a + 1..d {
            let c = cosine(&truth.theta[a], &truth.theta[b]);
            if truth.community[a] == truth.community[b] {
                within += c;
                wn += 1;
            } else {
                between += c;
                bn += 1;
            }
        }
    }
    SynthSummary {
        within_cosine: if wn > 0 { within / wn as f64 } else { 0.0 },
        between_cosine: if bn > 0 { between / bn as f64 } else { 0.0 },
        feature_edges: truth.feature_edges,
        broader_edges: truth.broader_edges,
        d_over_n: d as f64 / truth.n as f64,
    }
}

/// Small link-prediction benchmark: each community is a ring whose nodes
/// link to the next `offsets` ring positions (relation `step<o>` for offset
/// `o`), plus `bridges` random cross-community edges. Unlike a block model,
/// held-out edges are predictable from local structure rather than only from
/// community membership.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingKgConfig {
    pub communities: usize,
    pub nodes_per_community: usize,
    pub offsets: usize,
    pub bridges: usize,
    pub seed: u64,
}

impl Default for RingKgConfig {
    fn default() -> Self {
        RingKgConfig {
            communities: 2,
            nodes_per_community: 100,
            offsets: 3,
            bridges: 20,
            seed: 0,
        }
    }
}

pub fn ring_kg(cfg: &RingKgConfig) -> Result<KnowledgeGraph, SynthError> {
    let per = cfg.nodes_per_community;
    if cfg.communities == 0 || per < 2 * cfg.offsets + 1 || cfg.offsets == 0 {
        return Err(SynthError::Config(
            "ring KG needs at least one community, one offset and 2·offsets+1 nodes per ring".into(),
        ));
    }
    let node = |g: usize, p: usize| format!("c{g}:n{p:04}");
    let mut labeled = Vec::new();
    for g in 0..cfg.communities {
        for p in 0..per {
            for o in 1..=cfg.offsets {
                labeled.push((node(g, p), format!("step{o}"), node(g, (p + o) % per)));
            }
        }
    }
    if cfg.communities > 1 {
        let mut rng = seed::rng(cfg.seed, "ring-bridges", 0);
        for _ in 0..cfg.bridges {
            let a = rng.random_range(0..cfg.communities);
            let b = (a + 1 + rng.random_range(0..cfg.communities - 1)) % cfg.communities;
            labeled.push((
                node(a, rng.random_range(0..per)),
                "bridge".to_owned(),
                node(b, rng.random_range(0..per)),
            ));
        }
    }
    Ok(KnowledgeGraph::from_labeled(&labeled)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            d: 120,
            n: 30,
            n_communities: 3,
            p_intra: 0.1,
            p_inter: 0.01,
            n_broader: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = write_files(&generate(&small()).unwrap(), a.path()).unwrap();
        let fb = write_files(&generate(&small()).unwrap(), b.path()).unwrap();
        for (x, y) in [
            (&fa.triples, &fb.triples),
            (&fa.feature_map, &fb.feature_map),
            (&fa.dataset, &fb.dataset),
            (&fa.ground_truth, &fb.ground_truth),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn files_roundtrip_through_loader() {
        let out = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_files(&out, dir.path()).unwrap();
        let (kg, fm) = kg::load_kg(&files.triples, &files.feature_map).unwrap();
        assert_eq!(kg, out.kg);
        assert_eq!(fm, out.feature_map);
        let ds = TabularDataset::read_csv(&files.dataset, LABEL).unwrap();
        assert_eq!(ds, out.dataset);
    }

    #[test]
    fn ring_kg_shape() {
        let kg = ring_kg(&RingKgConfig::default()).unwrap();
        assert_eq!(kg.node_count(), 200);
        assert!(kg.edge_count() > 600 && kg.edge_count() <= 620);
        assert_eq!(kg, ring_kg(&RingKgConfig::default()).unwrap());
        assert!(ring_kg(&RingKgConfig { nodes_per_community: 4, ..RingKgConfig::default() }).is_err());
    }

    #[test]
    fn config_errors() {
        for bad in [
            SynthConfig { d: 0, ..small() },
            SynthConfig { n_communities: 0, ..small() },
            SynthConfig { p_intra: 1.5, ..small() },
            SynthConfig { p_inter: -0.1, ..small() },
        ] {
            assert!(matches!(generate(&bad), Err(SynthError::Config(_))));
        }
    }

    #[test]
    fn describe_constructed_case() {
        let truth = GroundTruth {
            community: vec![0, 0, 1, 1],
            latent: vec![vec![]; 4],
            theta: vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
            v: vec![1.0, 1.0],
            n: 2,
            feature_edges: 0,
            broader_edges: 0,
            intra_pairs: 2,
            inter_pairs: 4,
        };
        let s = describe(&truth);
        assert_eq!(s.within_cosine, 1.0);
        assert_eq!(s.between_cosine, 0.0);
        assert_eq!(s.d_over_n, 2.0);
    }

    #[test]
    fn default_regime() {
        let out = generate(&SynthConfig::default()).unwrap();
        let s = describe(&out.truth);
        assert_eq!(s.d_over_n, 20.0);
        assert!(s.within_cosine - s.between_cosine >= 0.3, "{s:?}");
        assert_eq!(out.dataset.d(), 2000);
        assert_eq!(out.truth.broader_edges, 12 * 500);
    }

    #[test]
    fn edge_counts_near_binomial_expectation() {
        let cfg = small();
        for s in 0..5 {
            let out = generate(&SynthConfig { seed: s, ..cfg.clone() }).unwrap();
            let t = &out.truth;
            let mean = cfg.p_intra * t.intra_pairs as f64 + cfg.p_inter * t.inter_pairs as f64;
            let var = cfg.p_intra * (1.0 - cfg.p_intra) * t.intra_pairs as f64
                + cfg.p_inter * (1.0 - cfg.p_inter) * t.inter_pairs as f64;
            let z = (t.feature_edges as f64 - mean) / var.sqrt();
            assert!(z.abs() < 4.0, "seed {s}: z = {z}");
        }
    }
}
