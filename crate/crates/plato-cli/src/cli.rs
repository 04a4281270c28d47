use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use plato::embed::EmbeddingMethod;
use plato::nn::{Activation, NumericMode};
use plato::pipeline::Ablation;

#[derive(Debug, Parser)]
#[command(name = "plato", version, about = "Knowledge-graph-inferred MLP weights for d ≫ n tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic benchmark: KG triples, feature map, dataset, ground truth.
    GenSynth(GenSynthArgs),
    /// Pretrain KG node embeddings.
    Pretrain(PretrainArgs),
    /// Train one explicit configuration on one split.
    Train(TrainArgs),
    /// Random search over configurations with repeated splits.
    Search(SearchArgs),
    /// Merge search reports into a table of mean ± std test PearsonR.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub c_latent: Option<usize>,
    #[arg(long)]
    pub h_true: Option<usize>,
    #[arg(long)]
    pub communities: Option<usize>,
    #[arg(long)]
    pub p_intra: Option<f64>,
    #[arg(long)]
    pub p_inter: Option<f64>,
    /// Broader-domain hub nodes.
    #[arg(long)]
    pub broader: Option<usize>,
    #[arg(long)]
    pub feature_relations: Option<usize>,
    #[arg(long)]
    pub within_spread: Option<f64>,
    #[arg(long)]
    pub signal_gain: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

/// KG edge dropout applied before pretraining and message passing.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DropArgs {
    #[arg(long, default_value_t = 1.0)]
    pub kg_keep_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub kg_drop_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long, default_value = "complex")]
    pub method: EmbeddingMethod,
    /// Embedding dimension.
    #[arg(long, default_value_t = 200)]
    pub c: usize,
    #[arg(long, default_value_t = 100)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0.1)]
    pub pretrain_lr: f64,
    #[arg(long, default_value_t = 256)]
    pub pretrain_batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub pretrain_l2: f64,
    #[arg(long, default_value_t = 4.0)]
    pub transe_margin: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub feature_map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Pretrain only on edges between feature nodes.
    #[arg(long)]
    pub feature_only: bool,
    #[command(flatten)]
    pub drop: DropArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Dataset and KG inputs shared by `train` and `search`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Label column of the dataset CSV.
    #[arg(long, default_value = "target")]
    pub label: String,
    #[arg(long)]
    pub kg: Option<PathBuf>,
    #[arg(long)]
    pub feature_map: Option<PathBuf>,
    /// Embedding manifest from `pretrain`; pretrains internally when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub drop: DropArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

/// Overrides for one training configuration; unset fields keep defaults.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TrialArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Message-passing rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub attention_hidden: Option<usize>,
    #[arg(long)]
    pub inference_layers: Option<usize>,
    #[arg(long)]
    pub inference_hidden: Option<usize>,
    /// MLP depth, first layer included.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub sigma: Option<Activation>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "none")]
    pub ablation: Ablation,
    #[command(flatten)]
    pub trial: TrialArgs,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "f64")]
    pub numeric: NumericMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Plato,
    Mlp,
    Ridge,
    Lasso,
    Graphnet,
    NcLasso,
    NetworkLasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceChoice {
    /// Narrow width and depth ranges for single-core runs.
    Desk,
    /// The full search ranges.
    Full,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long, value_enum, default_value = "plato")]
    pub model: ModelChoice,
    /// PLATO variant; ignored by the other models.
    #[arg(long, default_value = "none")]
    pub ablation: Ablation,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    #[arg(long, default_value_t = 3)]
    pub splits: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, value_enum, default_value = "desk")]
    pub space: SpaceChoice,
    /// Parallel runs; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "f64")]
    pub numeric: NumericMode,
    /// Dataset label in the report; defaults to the data file stem.
    #[arg(long)]
    pub dataset_name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// JSON-lines report from `search`; repeat to merge several.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
    /// Also write the table and a manifest into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn clap_definitions_are_consistent() {
        super::Cli::command().debug_assert();
    }
}
