use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use plato::baselines::{sample_linear_config, Penalty};
use plato::data::TabularDataset;
use plato::embed::{self, extract_feature_embeddings, EmbeddingMatrix, PretrainConfig};
use plato::kg::{self, FeatureMapping, KnowledgeGraph};
use plato::model::{save_model, FileRef, ModelArtifact};
use plato::nn::{NumericMode, Real};
use plato::pipeline::{self, Ablation};
use plato::search::{self, SearchOptions, SearchReport, TrialSummary};
use plato::seed;
use plato::synth::{self, SynthConfig};
use plato::train::{self, sample_config, SearchSpace, TrainedModel, TrialConfig};

use crate::cli::*;
use crate::manifest::{self, Recorder};
use crate::usage;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => gen_synth(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::Train(a) => match a.numeric {
            NumericMode::F64 => train_cmd::<f64>(&a),
            NumericMode::F32 => train_cmd::<f32>(&a),
        },
        Command::Search(a) => match a.numeric {
            NumericMode::F64 => search_cmd::<f64>(&a),
            NumericMode::F32 => search_cmd::<f32>(&a),
        },
        Command::Report(a) => report(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth_config(a: &GenSynthArgs) -> SynthConfig {
    let mut c = SynthConfig {
        seed: a.seed,
        ..SynthConfig::default()
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { c.$field = v; })*
        };
    }
    set!(d => d, n => n, c_latent => c_latent, h_true => h_true, communities => n_communities,
        p_intra => p_intra, p_inter => p_inter, broader => n_broader,
        feature_relations => n_feature_relations, within_spread => within_spread,
        signal_gain => signal_gain, noise_std => noise_std);
    c
}

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let cfg = synth_config(a);
    cfg.validate().map_err(usage)?;
    let mut rec = Recorder::new("gen-synth", &cfg, NumericMode::F64);
    rec.seed("seed", cfg.seed);
    let out = synth::generate(&cfg)?;
    let files = synth::write_files(&out, &a.out)?;
    for p in [&files.triples, &files.feature_map, &files.dataset, &files.ground_truth] {
        rec.output(p.file_name().expect("file name").to_owned());
    }
    rec.finish(&a.out)?;
    eprintln!(
        "wrote {} samples × {} features, {} KG edges to {}",
        out.dataset.n(),
        out.dataset.d(),
        out.kg.edge_count(),
        a.out.display()
    );
    Ok(())
}

fn pretrain_config(e: &EmbedArgs, seed: u64) -> Result<PretrainConfig> {
    let cfg = PretrainConfig {
        method: e.method,
        dim: e.c,
        negatives_per_positive: e.negatives,
        epochs: e.pretrain_epochs,
        learning_rate: e.pretrain_lr,
        batch_size: e.pretrain_batch_size,
        l2: e.pretrain_l2,
        transe_margin: e.transe_margin,
        seed,
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn load_graph(kg_path: &Path, fm_path: &Path, drop: &DropArgs, rec: &mut Recorder) -> Result<(KnowledgeGraph, FeatureMapping)> {
    let (kg, fm) = kg::load_kg(kg_path, fm_path).map_err(usage)?;
    rec.input(kg_path)?;
    rec.input(fm_path)?;
    rec.seed("kg_drop_seed", drop.kg_drop_seed);
    let kg = if drop.kg_keep_fraction < 1.0 {
        kg.drop_edges(drop.kg_keep_fraction, drop.kg_drop_seed).map_err(usage)?
    } else if drop.kg_keep_fraction == 1.0 {
        kg
    } else {
        return Err(usage(format!("--kg-keep-fraction {} is outside (0, 1]", drop.kg_keep_fraction)));
    };
    Ok((kg, fm))
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let cfg = pretrain_config(&a.embed, a.seed)?;
    let mut rec = Recorder::new("pretrain", a, NumericMode::F64);
    rec.seed("seed", a.seed);
    let (kg, fm) = load_graph(&a.kg, &a.feature_map, &a.drop, &mut rec)?;
    let ablation = if a.feature_only { Ablation::FeatureOnlyKg } else { Ablation::None };
    let (g, _) = pipeline::pretraining_graph(ablation, &kg, &fm);
    let table = embed::pretrain(&g, &cfg)?;
    create_dir(&a.out)?;
    embed::save_table(&table, &a.out, "embeddings")?;
    for f in ["embeddings.json", "embeddings.entities.f32", "embeddings.relations.f32"] {
        rec.output(f);
    }
    rec.finish(&a.out)?;
    eprintln!(
        "{} embeddings for {} nodes (c = {}) in {}",
        cfg.method,
        table.entity_count(),
        cfg.dim,
        a.out.display()
    );
    Ok(())
}

/// Loaded dataset plus everything the chosen model needs from the KG.
struct Prepared {
    ds: TabularDataset,
    graph: Option<(KnowledgeGraph, FeatureMapping)>,
    m: Option<EmbeddingMatrix>,
    embeddings: Option<FileRef>,
}

fn prepare(input: &InputArgs, ablation: Ablation, needs_kg: bool, seed: u64, out: &Path, rec: &mut Recorder) -> Result<Prepared> {
    let ds = TabularDataset::read_csv(&input.data, &input.label).map_err(usage)?;
    rec.input(&input.data)?;
    if !needs_kg {
        return Ok(Prepared {
            ds,
            graph: None,
            m: None,
            embeddings: None,
        });
    }
    let (kg_path, fm_path) = match (&input.kg, &input.feature_map) {
        (Some(k), Some(f)) => (k, f),
        _ => return Err(usage("this model needs --kg and --feature-map")),
    };
    let (kg, fm) = load_graph(kg_path, fm_path, &input.drop, rec)?;
    let fm = ds.align(&fm).map_err(usage)?;
    if !ablation.uses_kg() {
        return Ok(Prepared {
            ds,
            graph: Some((kg, fm)),
            m: None,
            embeddings: None,
        });
    }
    let (pg, pfm) = pipeline::pretraining_graph(ablation, &kg, &fm);
    let manifest_path = match &input.embeddings {
        Some(p) => {
            rec.input(p)?;
            p.clone()
        }
        None => {
            let pretrain_seed = seed::derive(seed, "pretrain", 0);
            rec.seed("pretrain_seed", pretrain_seed);
            let cfg = pretrain_config(&input.embed, pretrain_seed)?;
            let table = embed::pretrain(&pg, &cfg)?;
            create_dir(out)?;
            let p = embed::save_table(&table, out, "embeddings")?;
            for f in ["embeddings.json", "embeddings.entities.f32", "embeddings.relations.f32"] {
                rec.output(f);
            }
            p
        }
    };
    // Reloaded even when just written, so a later `--embeddings` run sees
    // the same float32-rounded values.
    let table = embed::load_table(&manifest_path).map_err(usage)?;
    if table.entity_count() != pg.node_count() {
        return Err(usage(format!(
            "embedding table has {} nodes but the {} graph has {}",
            table.entity_count(),
            if ablation == Ablation::FeatureOnlyKg { "feature-only" } else { "pretraining" },
            pg.node_count()
        )));
    }
    let shown = if input.embeddings.is_some() { manifest_path.clone() } else { PathBuf::from("embeddings.json") };
    let embeddings = Some(manifest::file_ref(&manifest_path, shown)?);
    Ok(Prepared {
        m: Some(extract_feature_embeddings(&table, &pfm)),
        ds,
        graph: Some((kg, fm)),
        embeddings,
    })
}

fn trial_config(t: &TrialArgs, seed: u64) -> TrialConfig {
    let mut c = TrialConfig {
        seed,
        ..TrialConfig::default()
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = t.$flag { c.$field = v; })*
        };
    }
    set!(lr => learning_rate, batch_size => batch_size, l2 => l2, rounds => rounds, beta => beta,
        attention_hidden => attention_hidden, inference_layers => inference_layers,
        inference_hidden => inference_hidden, layers => layers, hidden => hidden, sigma => sigma,
        activation => activation, max_epochs => max_epochs, patience => patience);
    c
}

fn check_optim(c: &TrialConfig) -> Result<()> {
    if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
        return Err(usage("--lr must be positive and finite"));
    }
    if !(c.l2 >= 0.0 && c.l2.is_finite()) {
        return Err(usage("--l2 must be non-negative"));
    }
    if c.batch_size == 0 || c.max_epochs == 0 || c.patience == 0 {
        return Err(usage("--batch-size, --max-epochs and --patience must be positive"));
    }
    Ok(())
}

fn model_spec<T: Real>(p: &Prepared, ablation: Ablation) -> Result<train::ModelSpec<T>> {
    let inputs = match (&p.m, &p.graph) {
        (Some(m), Some((kg, fm))) => Some(pipeline::frozen_inputs::<T>(m, kg, fm).map_err(usage)?),
        _ => None,
    };
    pipeline::model_spec(ablation, inputs).map_err(usage)
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    model: &'a str,
    ablation: Ablation,
    config_hash: String,
    split_seed: u64,
    val_r: f64,
    test_r: f64,
    best_epoch: usize,
    epochs: usize,
    trainable: usize,
    /// Same network with a dense first layer; absent for the plain MLP.
    dense_equivalent: Option<usize>,
    history: &'a [train::EpochRecord],
}

fn train_cmd<T: Real>(a: &TrainArgs) -> Result<()> {
    let trial = trial_config(&a.trial, a.seed);
    check_optim(&trial)?;
    let mut rec = Recorder::new("train", a, a.numeric);
    rec.seed("seed", a.seed);
    rec.seed("split_seed", a.split_seed);
    let p = prepare(&a.input, a.ablation, a.ablation.uses_kg(), a.seed, &a.out, &mut rec)?;
    let spec = model_spec::<T>(&p, a.ablation)?;
    if let train::ModelSpec::Plato { .. } = spec {
        spec.architecture(&trial).validate().map_err(usage)?;
    } else if trial.layers == 0 || trial.hidden == 0 {
        return Err(usage("--layers and --hidden must be positive"));
    }
    let sp = train::split(p.ds.n(), a.split_seed).map_err(usage)?;
    let outcome = train::train_trial(&p.ds, &sp, &spec, &trial, a.seed)
        .map_err(|f| anyhow!("training failed at epoch {}: {}", f.epoch, f.reason))?;
    create_dir(&a.out)?;
    let dense_equivalent = match &outcome.model {
        TrainedModel::Plato(m) => Some(m.dense_equivalent_count()),
        TrainedModel::Mlp(_) => None,
    };
    let metrics = TrainMetrics {
        model: a.ablation.model_name(),
        ablation: a.ablation,
        config_hash: trial.hash(),
        split_seed: a.split_seed,
        val_r: outcome.val_r,
        test_r: outcome.test_r,
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        trainable: outcome.model.count_trainable(),
        dense_equivalent,
        history: &outcome.history,
    };
    write_json(&a.out.join("metrics.json"), &metrics)?;
    let artifact: ModelArtifact<T> = outcome.model.into();
    save_model(&artifact, &a.out, "model", a.seed, p.embeddings.clone())?;
    for f in ["model.json", "model.params.f32", "metrics.json"] {
        rec.output(f);
    }
    rec.finish(&a.out)?;
    eprintln!(
        "{}: val r = {:.3}, test r = {:.3} after {} epochs",
        metrics.model, metrics.val_r, metrics.test_r, metrics.epochs
    );
    Ok(())
}

fn penalty(m: ModelChoice) -> Option<Penalty> {
    Some(match m {
        ModelChoice::Ridge => Penalty::Ridge,
        ModelChoice::Lasso => Penalty::Lasso,
        ModelChoice::Graphnet => Penalty::GraphNet,
        ModelChoice::NcLasso => Penalty::NcLasso,
        ModelChoice::NetworkLasso => Penalty::NetworkLasso,
        ModelChoice::Plato | ModelChoice::Mlp => return None,
    })
}

fn search_cmd<T: Real>(a: &SearchArgs) -> Result<()> {
    if a.trials == 0 || a.splits == 0 || a.repeats == 0 || a.jobs == 0 {
        return Err(usage("--trials, --splits, --repeats and --jobs must be positive"));
    }
    let opts = SearchOptions {
        n_splits: a.splits,
        n_repeats: a.repeats,
        master_seed: a.seed,
        jobs: a.jobs,
    };
    let dataset = a.dataset_name.clone().unwrap_or_else(|| {
        a.input
            .data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let linear = penalty(a.model);
    let ablation = match a.model {
        ModelChoice::Mlp => Ablation::NoKg,
        ModelChoice::Plato => a.ablation,
        _ => Ablation::NoKg,
    };
    let numeric = if linear.is_some() { NumericMode::F64 } else { a.numeric };
    let mut rec = Recorder::new("search", a, numeric);
    rec.seed("seed", a.seed);
    let needs_kg = match linear {
        Some(p) => p.uses_graph(),
        None => ablation.uses_kg(),
    };
    let p = prepare(&a.input, ablation, needs_kg, a.seed, &a.out, &mut rec)?;
    let report: SearchReport = match linear {
        Some(pen) => {
            let configs: Vec<_> = (0..a.trials as u64).map(|i| sample_linear_config(pen, a.seed, i)).collect();
            let graph = p.graph.as_ref().map(|(kg, fm)| pipeline::baseline_graph(kg, fm));
            pipeline::search_linear(&p.ds, &dataset, &configs, graph.as_ref(), &opts)?
        }
        None => {
            let space = match a.space {
                SpaceChoice::Desk => SearchSpace::desk(),
                SpaceChoice::Full => SearchSpace::full(),
            };
            space.validate().map_err(usage)?;
            let configs: Vec<TrialConfig> = (0..a.trials as u64).map(|i| sample_config(a.seed, i, &space)).collect();
            let spec = model_spec::<T>(&p, ablation)?;
            pipeline::search_model(&p.ds, &dataset, &spec, ablation.model_name(), &configs, &opts)?
        }
    };
    create_dir(&a.out)?;
    search::write_jsonl(&a.out.join("report.jsonl"), &report.records)?;
    write_json(&a.out.join("summary.json"), &report.ranking)?;
    rec.output("report.jsonl");
    rec.output("summary.json");
    rec.finish(&a.out)?;
    let best = report.best();
    eprintln!(
        "{} on {}: best trial {} (val r = {:.3}), test r = {:.3} ± {:.3} over {} runs",
        best.model, best.dataset, best.trial, best.mean_val_r, best.mean_test_r, best.std_test_r, best.runs
    );
    Ok(())
}

/// Selected configuration of every (model, dataset) pair, best test
/// PearsonR first.
pub fn report_rows(summaries: &[TrialSummary]) -> Vec<&TrialSummary> {
    let mut rows: Vec<&TrialSummary> = Vec::new();
    for s in summaries {
        if !rows.iter().any(|r| r.model == s.model && r.dataset == s.dataset) {
            rows.push(s);
        }
    }
    rows.sort_by(|a, b| {
        b.mean_test_r
            .total_cmp(&a.mean_test_r)
            .then_with(|| (&a.dataset, &a.model).cmp(&(&b.dataset, &b.model)))
    });
    rows
}

fn render_text(rows: &[&TrialSummary]) -> String {
    let header = ["dataset", "model", "trial", "runs", "val r", "test r"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.dataset.clone(),
                r.model.clone(),
                r.trial.to_string(),
                if r.failures > 0 { format!("{} ({} failed)", r.runs, r.failures) } else { r.runs.to_string() },
                format!("{:.3}", r.mean_val_r),
                format!("{:.3} ± {:.3}", r.mean_test_r, r.std_test_r),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_owned() + "\n"
    };
    let mut out = line(&header.map(String::from));
    for row in &body {
        out.push_str(&line(row));
    }
    out
}

fn render_csv(rows: &[&TrialSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "model", "trial", "config_hash", "runs", "failures", "mean_val_r", "mean_test_r", "std_test_r"])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.trial.to_string(),
            r.config_hash.clone(),
            r.runs.to_string(),
            r.failures.to_string(),
            format!("{:.3}", r.mean_val_r),
            format!("{:.3}", r.mean_test_r),
            format!("{:.3}", r.std_test_r),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?).expect("csv output is UTF-8"))
}

fn report(a: &ReportArgs) -> Result<()> {
    let mut rec = Recorder::new("report", a, NumericMode::F64);
    let mut records = Vec::new();
    for p in &a.input {
        records.extend(search::read_jsonl(p).map_err(usage)?);
        rec.input(p)?;
    }
    let summaries = search::summarize(&records);
    if summaries.is_empty() {
        return Err(usage("no successful runs in the given reports"));
    }
    let rows = report_rows(&summaries);
    let (text, name) = match a.format {
        ReportFormat::Text => (render_text(&rows), "report.txt"),
        ReportFormat::Csv => (render_csv(&rows)?, "report.csv"),
    };
    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        let path = out.join(name);
        std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        rec.output(name);
        rec.finish(out)?;
    }
    Ok(())
}
