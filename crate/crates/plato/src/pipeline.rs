//! Glue between the pieces: the ablation variants, how each one prepares
//! its frozen inputs, and a search runner for the inferred-weight models.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_linear, LinearConfig};
use crate::data::TabularDataset;
use crate::embed::{extract_feature_embeddings, pretrain, EmbedError, EmbeddingMatrix, PretrainConfig};
use crate::kg::{FeatureMapping, KnowledgeGraph, Neighborhoods};
use crate::model::{FeatureGraph, FrozenInputs, ModelError};
use crate::nn::Real;
use crate::search::{run_search, RunMetrics, SearchOptions, SearchReport};
use crate::train::{pearson_r, train_trial, ModelSpec, TrialConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Full model: pretraining on the whole KG, message passing, deep head.
    None,
    /// ℬ applied to `M` directly.
    NoMp,
    /// Plain MLP; no KG involved.
    NoKg,
    /// Pretraining sees only edges between feature nodes.
    FeatureOnlyKg,
    /// Single inferred linear layer.
    PlatoLr,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoMp,
        Ablation::NoKg,
        Ablation::FeatureOnlyKg,
        Ablation::PlatoLr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoMp => "no-mp",
            Ablation::NoKg => "no-kg",
            Ablation::FeatureOnlyKg => "feature-only-kg",
            Ablation::PlatoLr => "plato-lr",
        }
    }

    /// Report label of the model this variant trains.
    pub fn model_name(self) -> &'static str {
        match self {
            Ablation::None => "plato",
            Ablation::NoMp => "plato-no-mp",
            Ablation::NoKg => "mlp",
            Ablation::FeatureOnlyKg => "plato-feature-only-kg",
            Ablation::PlatoLr => "plato-lr",
        }
    }

    pub fn uses_kg(self) -> bool {
        self != Ablation::NoKg
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (none|no-mp|no-kg|feature-only-kg|plato-lr)"))
    }
}

/// Edges the embedder sees under `ablation`, with the feature mapping
/// translated onto that graph. Only [`Ablation::FeatureOnlyKg`] changes
/// anything.
pub fn pretraining_graph(
    ablation: Ablation,
    kg: &KnowledgeGraph,
    fm: &FeatureMapping,
) -> (KnowledgeGraph, FeatureMapping) {
    match ablation {
        Ablation::FeatureOnlyKg => kg.feature_only_graph(fm),
        _ => (kg.clone(), fm.clone()),
    }
}

/// Pretrains and extracts `M` for `ablation`; `None` for the plain MLP.
pub fn pretrain_features(
    ablation: Ablation,
    kg: &KnowledgeGraph,
    fm: &FeatureMapping,
    cfg: &PretrainConfig,
) -> Result<Option<EmbeddingMatrix>, EmbedError> {
    if !ablation.uses_kg() {
        return Ok(None);
    }
    let (g, m) = pretraining_graph(ablation, kg, fm);
    let table = pretrain(&g, cfg)?;
    Ok(Some(extract_feature_embeddings(&table, &m)))
}

/// Frozen inputs with message passing on the feature-induced subgraph of
/// `kg`.
pub fn frozen_inputs<T: Real>(
    m: &EmbeddingMatrix,
    kg: &KnowledgeGraph,
    fm: &FeatureMapping,
) -> Result<Arc<FrozenInputs<T>>, ModelError> {
    Ok(Arc::new(FrozenInputs::new(m.to_real(), FeatureGraph::feature_subgraph(kg, fm))?))
}

pub fn model_spec<T: Real>(ablation: Ablation, inputs: Option<Arc<FrozenInputs<T>>>) -> Result<ModelSpec<T>, ModelError> {
    let need = || ModelError::Config(format!("ablation `{ablation}` needs pretrained embeddings"));
    Ok(match ablation {
        Ablation::NoKg => ModelSpec::Mlp,
        a => ModelSpec::Plato {
            inputs: inputs.ok_or_else(need)?,
            linear_head: a == Ablation::PlatoLr,
            no_mp: a == Ablation::NoMp,
        },
    })
}

/// Searches `configs` for one model spec.
pub fn search_model<T: Real>(
    ds: &TabularDataset,
    dataset_name: &str,
    spec: &ModelSpec<T>,
    model_name: &str,
    configs: &[TrialConfig],
    opts: &SearchOptions,
) -> crate::search::Result<SearchReport> {
    run_search(model_name, dataset_name, ds.n(), configs, TrialConfig::hash, opts, |cfg, plan, sp| {
        let out = train_trial(ds, sp, spec, cfg, plan.run_seed).map_err(|f| format!("epoch {}: {}", f.epoch, f.reason))?;
        Ok(RunMetrics {
            val_r: out.val_r,
            test_r: out.test_r,
            epochs: out.history.len(),
            best_epoch: out.best_epoch,
            trainable: out.model.count_trainable(),
        })
    })
}

/// Undirected feature graph the graph-regularized baselines penalize.
pub fn baseline_graph(kg: &KnowledgeGraph, fm: &FeatureMapping) -> Neighborhoods {
    kg.induce_feature_subgraph(fm).neighborhoods()
}

/// Searches linear baseline configs. Every repeat of a split refits the
/// same deterministic solver, so repeats only matter for the record layout.
pub fn search_linear(
    ds: &TabularDataset,
    dataset_name: &str,
    configs: &[LinearConfig],
    graph: Option<&Neighborhoods>,
    opts: &SearchOptions,
) -> crate::search::Result<SearchReport> {
    let model = configs.first().map(|c| c.penalty.name()).unwrap_or("linear");
    run_search(model, dataset_name, ds.n(), configs, LinearConfig::hash, opts, |cfg, _, sp| {
        let train = ds.subset(&sp.train);
        let fitted = fit_linear(cfg, &train.x, &train.y, graph).map_err(|e| e.to_string())?;
        let score = |rows: &[usize]| {
            let part = ds.subset(rows);
            pearson_r(&part.y, &fitted.predict(&part.x)).map_err(|e| e.to_string())
        };
        let trainable = fitted.weights.len() + 1;
        Ok(RunMetrics {
            val_r: score(&sp.val)?,
            test_r: score(&sp.test)?,
            epochs: 0,
            best_epoch: 0,
            trainable,
        })
    })
}
