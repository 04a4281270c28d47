//! Heterogeneous knowledge graph store, feature-node mapping and the graph
//! transforms used by the ablations (feature-only subgraph, edge dropout).
//!
//! Node and relation labels are interned in lexicographic order, so ids are
//! a pure function of the label sets and do not depend on file order.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::seed;

/// Dense node identifier in `0..node_count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// Dense relation identifier in `0..relation_count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A `(head, relation, tail)` edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: NodeId,
    pub relation: RelationId,
    pub tail: NodeId,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head: NodeId(head),
            relation: RelationId(relation),
            tail: NodeId(tail),
        }
    }
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("feature `{feature}` maps to unknown node `{label}`")]
    MissingNode { feature: String, label: String },
    #[error("feature `{0}` is listed more than once")]
    DuplicateFeature(String),
    #[error("features `{first}` and `{second}` map to the same node `{label}`")]
    SharedNode {
        first: String,
        second: String,
        label: String,
    },
    #[error("knowledge graph has no edges")]
    EmptyGraph,
    #[error("self-loop on node `{0}`")]
    SelfLoop(String),
    #[error("duplicate triple {0:?}")]
    DuplicateTriple(Triple),
    #[error("node {node} out of range (node_count = {count})")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("relation {relation} out of range (relation_count = {count})")]
    RelationOutOfRange { relation: usize, count: usize },
    #[error("keep fraction {0} is outside (0, 1]")]
    KeepFraction(f64),
}

pub type Result<T> = std::result::Result<T, KgError>;

/// Immutable typed multigraph of directed triplets.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    node_labels: Vec<String>,
    relation_labels: Vec<String>,
    edges: Vec<Triple>,
    /// Outgoing `(neighbor, relation)` pairs per node, in edge order.
    adjacency: Vec<Vec<(NodeId, RelationId)>>,
    /// Heads of incoming edges per node, in edge order.
    incoming: Vec<Vec<NodeId>>,
}

impl KnowledgeGraph {
    /// Builds a graph from already-interned ids, checking every invariant.
    /// An edge-less graph is valid here (isolated feature subgraphs need it).
    pub fn new(
        node_labels: Vec<String>,
        relation_labels: Vec<String>,
        edges: Vec<Triple>,
    ) -> Result<Self> {
        let n = node_labels.len();
        let r = relation_labels.len();
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            for node in [e.head.0, e.tail.0] {
                if node >= n {
                    return Err(KgError::NodeOutOfRange { node, count: n });
                }
            }
            if e.relation.0 >= r {
                return Err(KgError::RelationOutOfRange {
                    relation: e.relation.0,
                    count: r,
                });
            }
            if e.head == e.tail {
                return Err(KgError::SelfLoop(node_labels[e.head.0].clone()));
            }
            if !seen.insert(*e) {
                return Err(KgError::DuplicateTriple(*e));
            }
        }
        let (adjacency, incoming) = build_adjacency(n, &edges);
        Ok(KnowledgeGraph {
            node_labels,
            relation_labels,
            edges,
            adjacency,
            incoming,
        })
    }

    /// Interns string triples. Labels are sorted lexicographically to assign
    /// ids; duplicate triples after the first are dropped.
    pub fn from_labeled<S: AsRef<str>>(triples: &[(S, S, S)]) -> Result<Self> {
        let nodes: BTreeSet<&str> = triples
            .iter()
            .flat_map(|(h, _, t)| [h.as_ref(), t.as_ref()])
            .collect();
        let relations: BTreeSet<&str> = triples.iter().map(|(_, r, _)| r.as_ref()).collect();
        let node_index: HashMap<&str, usize> =
            nodes.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let rel_index: HashMap<&str, usize> =
            relations.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut seen = HashSet::new();
        let mut edges = Vec::with_capacity(triples.len());
        for (h, r, t) in triples {
            let e = Triple::new(
                node_index[h.as_ref()],
                rel_index[r.as_ref()],
                node_index[t.as_ref()],
            );
            if seen.insert(e) {
                edges.push(e);
            }
        }
        KnowledgeGraph::new(
            nodes.into_iter().map(str::to_owned).collect(),
            relations.into_iter().map(str::to_owned).collect(),
            edges,
        )
    }

    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    pub fn node_label(&self, node: NodeId) -> &str {
        &self.node_labels[node.0]
    }

    /// Id of the node with this label.
    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.node_labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .ok()
            .map(NodeId)
            // Graphs built through `new` need not have sorted labels.
            .or_else(|| self.node_labels.iter().position(|l| l == label).map(NodeId))
    }

    /// Outgoing edges of `node` as stated in the triples.
    pub fn out_edges(&self, node: NodeId) -> &[(NodeId, RelationId)] {
        &self.adjacency[node.0]
    }

    /// Deduplicated union of in- and out-neighbors over every relation,
    /// sorted ascending.
    pub fn undirected_neighbors(&self, node: NodeId) -> Result<Vec<NodeId>> {
        if node.0 >= self.node_count() {
            return Err(KgError::NodeOutOfRange {
                node: node.0,
                count: self.node_count(),
            });
        }
        let mut out: Vec<NodeId> = self.adjacency[node.0]
            .iter()
            .map(|(n, _)| *n)
            .chain(self.incoming[node.0].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Undirected, relation-agnostic neighborhoods of every node in CSR form.
    pub fn neighborhoods(&self) -> Neighborhoods {
        let mut offsets = Vec::with_capacity(self.node_count() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for v in 0..self.node_count() {
            let nbrs = self
                .undirected_neighbors(NodeId(v))
                .expect("node in range");
            targets.extend(nbrs.into_iter().map(|n| n.0));
            offsets.push(targets.len());
        }
        Neighborhoods { offsets, targets }
    }

    /// Distinct unordered `{a, b}` node pairs joined by at least one edge,
    /// each reported once with `a < b`.
    pub fn undirected_pairs(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (e.head.0, e.tail.0);
                (a.min(b), a.max(b))
            })
            .collect();
        set.into_iter().collect()
    }

    /// Feature-only view: nodes are the features in feature order, edges are
    /// the triples whose endpoints are both feature nodes, and every relation
    /// is collapsed into one.
    pub fn induce_feature_subgraph(&self, fm: &FeatureMapping) -> KnowledgeGraph {
        let mut feature_of = vec![usize::MAX; self.node_count()];
        for (j, node) in fm.nodes().iter().enumerate() {
            feature_of[node.0] = j;
        }
        let mut seen = HashSet::new();
        let mut edges = Vec::new();
        for e in &self.edges {
            let (a, b) = (feature_of[e.head.0], feature_of[e.tail.0]);
            if a != usize::MAX && b != usize::MAX {
                let t = Triple::new(a, 0, b);
                if seen.insert(t) {
                    edges.push(t);
                }
            }
        }
        let labels = fm.nodes().iter().map(|n| self.node_labels[n.0].clone()).collect();
        KnowledgeGraph::new(labels, vec![FEATURE_RELATION.to_owned()], edges)
            .expect("subgraph of a valid graph is valid")
    }

    /// Feature nodes only, with every relation preserved: keeps the triples
    /// whose endpoints are both features. Node `j` is feature `j`; the
    /// returned mapping is the identity.
    pub fn feature_only_graph(&self, fm: &FeatureMapping) -> (KnowledgeGraph, FeatureMapping) {
        let mut feature_of = vec![usize::MAX; self.node_count()];
        for (j, node) in fm.nodes().iter().enumerate() {
            feature_of[node.0] = j;
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                let (a, b) = (feature_of[e.head.0], feature_of[e.tail.0]);
                (a != usize::MAX && b != usize::MAX).then(|| Triple::new(a, e.relation.0, b))
            })
            .collect();
        let labels = fm.nodes().iter().map(|n| self.node_labels[n.0].clone()).collect();
        let g = KnowledgeGraph::new(labels, self.relation_labels.clone(), edges)
            .expect("subgraph of a valid graph is valid");
        let m = FeatureMapping::identity(fm.names().to_vec(), &g).expect("identity mapping is valid");
        (g, m)
    }

    /// Keeps a uniformly random subset of `ceil(keep_fraction * |E|)` edges.
    /// The node set is unchanged and surviving edges keep their order.
    pub fn drop_edges(&self, keep_fraction: f64, seed: u64) -> Result<KnowledgeGraph> {
        self.split_edges(keep_fraction, seed).map(|(kept, _)| kept)
    }

    /// Same selection as [`KnowledgeGraph::drop_edges`], also returning the
    /// removed edges, e.g. as held-out positives for link prediction.
    pub fn split_edges(&self, keep_fraction: f64, seed: u64) -> Result<(KnowledgeGraph, Vec<Triple>)> {
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(KgError::KeepFraction(keep_fraction));
        }
        let m = self.edge_count();
        let keep = kept_edge_count(m, keep_fraction);
        let mut order: Vec<usize> = (0..m).collect();
        let mut removed = Vec::new();
        if keep < m {
            order.shuffle(&mut seed::rng(seed, "drop-edges", 0));
            removed = order.split_off(keep);
            order.sort_unstable();
            removed.sort_unstable();
        }
        let edges = order.into_iter().map(|i| self.edges[i]).collect();
        let kept = KnowledgeGraph::new(self.node_labels.clone(), self.relation_labels.clone(), edges)?;
        Ok((kept, removed.into_iter().map(|i| self.edges[i]).collect()))
    }

    /// Rebuilds adjacency from the edge list and compares; used by tests.
    pub fn adjacency_consistent(&self) -> bool {
        let (adj, inc) = build_adjacency(self.node_count(), &self.edges);
        adj == self.adjacency && inc == self.incoming
    }
}

/// Label of the single relation of a feature-only subgraph.
pub const FEATURE_RELATION: &str = "feature_link";

/// `ceil(fraction * m)`, robust to representation error in the product.
pub fn kept_edge_count(m: usize, fraction: f64) -> usize {
    let exact = fraction * m as f64;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() < 1e-9 * (m as f64).max(1.0) {
        rounded
    } else {
        exact.ceil()
    };
    (count as usize).min(m)
}

fn build_adjacency(n: usize, edges: &[Triple]) -> (Vec<Vec<(NodeId, RelationId)>>, Vec<Vec<NodeId>>) {
    let mut adjacency = vec![Vec::new(); n];
    let mut incoming = vec![Vec::new(); n];
    for e in edges {
        adjacency[e.head.0].push((e.tail, e.relation));
        incoming[e.tail.0].push(e.head);
    }
    (adjacency, incoming)
}

/// Compressed neighbor lists: neighbors of `v` are
/// `targets[offsets[v]..offsets[v + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Neighborhoods {
    /// Undirected neighborhoods of `n` nodes from unordered pairs; duplicate
    /// pairs collapse and self pairs are ignored.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Neighborhoods {
        let mut lists = vec![Vec::new(); n];
        for &(a, b) in pairs {
            assert!(a < n && b < n, "pair ({a}, {b}) out of range for {n} nodes");
            if a != b {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            targets.extend(l);
            offsets.push(targets.len());
        }
        Neighborhoods { offsets, targets }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Number of directed (row, neighbor) slots.
    pub fn slot_count(&self) -> usize {
        self.targets.len()
    }
}

/// Injective, total map from feature index to KG node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMapping {
    names: Vec<String>,
    nodes: Vec<NodeId>,
}

impl FeatureMapping {
    pub fn new(names: Vec<String>, nodes: Vec<NodeId>, kg: &KnowledgeGraph) -> Result<Self> {
        assert_eq!(names.len(), nodes.len(), "one node per feature name");
        let mut name_seen = HashSet::new();
        let mut owner: HashMap<NodeId, usize> = HashMap::new();
        for (j, (name, node)) in names.iter().zip(&nodes).enumerate() {
            if !name_seen.insert(name.as_str()) {
                return Err(KgError::DuplicateFeature(name.clone()));
            }
            if node.0 >= kg.node_count() {
                return Err(KgError::NodeOutOfRange {
                    node: node.0,
                    count: kg.node_count(),
                });
            }
            if let Some(&first) = owner.get(node) {
                return Err(KgError::SharedNode {
                    first: names[first].clone(),
                    second: name.clone(),
                    label: kg.node_label(*node).to_owned(),
                });
            }
            owner.insert(*node, j);
        }
        Ok(FeatureMapping { names, nodes })
    }

    /// Resolves `(feature_name, node_label)` pairs against `kg`.
    pub fn from_labels<S: AsRef<str>>(pairs: &[(S, S)], kg: &KnowledgeGraph) -> Result<Self> {
        let mut names = Vec::with_capacity(pairs.len());
        let mut nodes = Vec::with_capacity(pairs.len());
        for (name, label) in pairs {
            let node = kg
                .node_by_label(label.as_ref())
                .ok_or_else(|| KgError::MissingNode {
                    feature: name.as_ref().to_owned(),
                    label: label.as_ref().to_owned(),
                })?;
            names.push(name.as_ref().to_owned());
            nodes.push(node);
        }
        FeatureMapping::new(names, nodes, kg)
    }

    /// Mapping of the feature subgraph onto itself: feature `j` is node `j`.
    pub fn identity(names: Vec<String>, kg: &KnowledgeGraph) -> Result<Self> {
        let nodes = (0..names.len()).map(NodeId).collect();
        FeatureMapping::new(names, nodes, kg)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_of(&self, feature: usize) -> NodeId {
        self.nodes[feature]
    }

    /// Feature index of every node, `None` for broader-domain nodes.
    pub fn feature_of_node(&self, node_count: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; node_count];
        for (j, n) in self.nodes.iter().enumerate() {
            out[n.0] = Some(j);
        }
        out
    }

    /// Restricts the mapping to `order` (feature names), in that order.
    pub fn reorder(&self, order: &[String]) -> Option<FeatureMapping> {
        let index: HashMap<&str, usize> = self
            .names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.as_str(), j))
            .collect();
        let mut names = Vec::with_capacity(order.len());
        let mut nodes = Vec::with_capacity(order.len());
        for name in order {
            let j = *index.get(name.as_str())?;
            names.push(self.names[j].clone());
            nodes.push(self.nodes[j]);
        }
        Some(FeatureMapping { names, nodes })
    }
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|source| KgError::Io {
            path: path.to_owned(),
            source,
        })
}

/// Reads tab-separated records with exactly `columns` fields, skipping
/// `#` comments and blank lines.
fn read_tsv(path: &Path, columns: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| KgError::Io {
            path: path.to_owned(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_owned).collect();
        if fields.len() != columns || fields.iter().any(|f| f.is_empty()) {
            return Err(KgError::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!(
                    "expected {columns} non-empty tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

/// Loads a triples file and a feature map file.
pub fn load_kg(triples_path: &Path, feature_map_path: &Path) -> Result<(KnowledgeGraph, FeatureMapping)> {
    let rows = read_tsv(triples_path, 3)?;
    if rows.is_empty() {
        return Err(KgError::EmptyGraph);
    }
    let mut triples = Vec::with_capacity(rows.len());
    for (line, f) in rows {
        let [h, r, t]: [String; 3] = f.try_into().expect("three columns");
        if h == t {
            return Err(KgError::Parse {
                path: triples_path.to_owned(),
                line,
                message: format!("self-loop on `{h}`"),
            });
        }
        triples.push((h, r, t));
    }
    let kg = KnowledgeGraph::from_labeled(&triples)?;

    let mut pairs = Vec::new();
    let mut names = HashSet::new();
    for (_, f) in read_tsv(feature_map_path, 2)? {
        let [name, label]: [String; 2] = f.try_into().expect("two columns");
        if !names.insert(name.clone()) {
            return Err(KgError::DuplicateFeature(name));
        }
        pairs.push((name, label));
    }
    let fm = FeatureMapping::from_labels(&pairs, &kg)?;
    Ok((kg, fm))
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| KgError::Io {
            path: path.to_owned(),
            source,
        })
}

/// Writes `head<TAB>relation<TAB>tail` lines using node and relation labels.
pub fn write_triples(path: &Path, kg: &KnowledgeGraph) -> Result<()> {
    let io = |source| KgError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = create(path)?;
    for e in kg.edges() {
        writeln!(
            w,
            "{}\t{}\t{}",
            kg.node_labels[e.head.0], kg.relation_labels[e.relation.0], kg.node_labels[e.tail.0]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `feature_name<TAB>node_label` lines in feature order.
pub fn write_feature_map(path: &Path, kg: &KnowledgeGraph, fm: &FeatureMapping) -> Result<()> {
    let io = |source| KgError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = create(path)?;
    for (name, node) in fm.names.iter().zip(&fm.nodes) {
        writeln!(w, "{}\t{}", name, kg.node_label(*node)).map_err(io)?;
    }
    w.flush().map_err(io)
}
