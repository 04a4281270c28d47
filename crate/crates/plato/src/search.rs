//! Random search under repeated holdout: every configuration is trained on
//! `n_splits` splits × `n_repeats` seeds, the best one is chosen by mean
//! validation PearsonR, and every run is kept as one JSON line.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::train::{split, SplitSpec, TrainError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("n_trials, n_splits and n_repeats must all be at least 1")]
    Empty,
    #[error("every trial failed:\n{0}")]
    AllFailed(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("could not build a thread pool: {0}")]
    Pool(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Parse {
        path: std::path::PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, SearchError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub n_splits: usize,
    pub n_repeats: usize,
    pub master_seed: u64,
    /// Worker threads; 1 keeps everything on the calling thread.
    pub jobs: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            n_splits: 3,
            n_repeats: 3,
            master_seed: 0,
            jobs: 1,
        }
    }
}

/// Identity and seeds of one (trial, split, repeat) run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub trial: usize,
    pub split: usize,
    pub repeat: usize,
    pub split_seed: u64,
    pub run_seed: u64,
}

/// What a runner reports for a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub val_r: f64,
    pub test_r: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub trainable: usize,
}

/// One line of the JSONL report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub dataset: String,
    pub trial: usize,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub split: usize,
    pub repeat: usize,
    pub split_seed: u64,
    pub run_seed: u64,
    pub val_r: Option<f64>,
    pub test_r: Option<f64>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub trainable: usize,
    pub error: Option<String>,
}

/// Aggregate over all runs of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub model: String,
    pub dataset: String,
    pub trial: usize,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub runs: usize,
    pub failures: usize,
    pub mean_val_r: f64,
    pub mean_test_r: f64,
    /// Population standard deviation over every successful run.
    pub std_test_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub records: Vec<RunRecord>,
    /// Best first.
    pub ranking: Vec<TrialSummary>,
}

impl SearchReport {
    pub fn best(&self) -> &TrialSummary {
        &self.ranking[0]
    }
}

/// `(mean, population std)`; `(NaN, NaN)` for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Seeds of every run, in (trial, split, repeat) order. Split seeds depend
/// only on the split index, so all trials see the same splits.
pub fn plan_runs(n_trials: usize, opts: &SearchOptions) -> Vec<RunPlan> {
    let mut plans = Vec::with_capacity(n_trials * opts.n_splits * opts.n_repeats);
    for trial in 0..n_trials {
        let trial_seed = seed::derive(opts.master_seed, "trial-run", trial as u64);
        for s in 0..opts.n_splits {
            for repeat in 0..opts.n_repeats {
                plans.push(RunPlan {
                    trial,
                    split: s,
                    repeat,
                    split_seed: seed::derive(opts.master_seed, "split-seed", s as u64),
                    run_seed: seed::derive(trial_seed, "repeat", (s * opts.n_repeats + repeat) as u64),
                });
            }
        }
    }
    plans
}

/// Groups records by (model, dataset, config) and ranks within each group
/// by mean validation PearsonR. Trials with failed runs rank after
/// complete ones; trials where every run failed are dropped.
pub fn summarize(records: &[RunRecord]) -> Vec<TrialSummary> {
    let mut groups: BTreeMap<(String, String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.model.clone(), r.dataset.clone(), r.config_hash.clone()))
            .or_default()
            .push(r);
    }
    let mut out: Vec<TrialSummary> = groups
        .into_values()
        .filter_map(|rs| {
            let ok: Vec<&&RunRecord> = rs.iter().filter(|r| r.error.is_none()).collect();
            if ok.is_empty() {
                return None;
            }
            let vals: Vec<f64> = ok.iter().filter_map(|r| r.val_r).collect();
            let tests: Vec<f64> = ok.iter().filter_map(|r| r.test_r).collect();
            let (mean_test_r, std_test_r) = mean_std(&tests);
            let first = rs[0];
            Some(TrialSummary {
                model: first.model.clone(),
                dataset: first.dataset.clone(),
                trial: first.trial,
                config_hash: first.config_hash.clone(),
                config: first.config.clone(),
                runs: rs.len(),
                failures: rs.len() - ok.len(),
                mean_val_r: mean_std(&vals).0,
                mean_test_r,
                std_test_r,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.model, &a.dataset)
            .cmp(&(&b.model, &b.dataset))
            .then((a.failures > 0).cmp(&(b.failures > 0)))
            .then(b.mean_val_r.total_cmp(&a.mean_val_r))
            .then(a.trial.cmp(&b.trial))
    });
    out
}

/// Runs every configuration on the shared splits. `runner` trains one
/// configuration for one plan and returns metrics or a failure message;
/// it must be deterministic in its arguments. Results are collected in
/// plan order whatever the number of jobs.
pub fn run_search<C, F>(
    model: &str,
    dataset: &str,
    n_samples: usize,
    configs: &[C],
    config_hash: impl Fn(&C) -> String,
    opts: &SearchOptions,
    runner: F,
) -> Result<SearchReport>
where
    C: Serialize + Sync,
    F: Fn(&C, &RunPlan, &SplitSpec) -> std::result::Result<RunMetrics, String> + Sync,
{
    if configs.is_empty() || opts.n_splits == 0 || opts.n_repeats == 0 {
        return Err(SearchError::Empty);
    }
    let splits: Vec<SplitSpec> = (0..opts.n_splits)
        .map(|s| split(n_samples, seed::derive(opts.master_seed, "split-seed", s as u64)))
        .collect::<std::result::Result<_, _>>()?;
    let plans = plan_runs(configs.len(), opts);
    let hashes: Vec<String> = configs.iter().map(&config_hash).collect();
    let values: Vec<serde_json::Value> = configs
        .iter()
        .map(|c| serde_json::to_value(c).expect("config serializes"))
        .collect();
    let one = |p: &RunPlan| {
        let result = runner(&configs[p.trial], p, &splits[p.split]);
        let (val_r, test_r, epochs, best_epoch, trainable, error) = match result {
            Ok(m) => (Some(m.val_r), Some(m.test_r), m.epochs, m.best_epoch, m.trainable, None),
            Err(e) => (None, None, 0, 0, 0, Some(e)),
        };
        RunRecord {
            model: model.to_owned(),
            dataset: dataset.to_owned(),
            trial: p.trial,
            config_hash: hashes[p.trial].clone(),
            config: values[p.trial].clone(),
            split: p.split,
            repeat: p.repeat,
            split_seed: p.split_seed,
            run_seed: p.run_seed,
            val_r,
            test_r,
            epochs,
            best_epoch,
            trainable,
            error,
        }
    };
    let records: Vec<RunRecord> = if opts.jobs <= 1 {
        plans.iter().map(one).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| SearchError::Pool(e.to_string()))?
            .install(|| plans.par_iter().map(one).collect())
    };
    let ranking = summarize(&records);
    if ranking.is_empty() {
        let diag = records
            .iter()
            .map(|r| {
                format!(
                    "  trial {} split {} repeat {}: {}",
                    r.trial,
                    r.split,
                    r.repeat,
                    r.error.as_deref().unwrap_or("?")
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        return Err(SearchError::AllFailed(diag));
    }
    Ok(SearchReport { records, ranking })
}

pub fn write_jsonl(path: &Path, records: &[RunRecord]) -> Result<()> {
    let io = |source| SearchError::Io {
        path: path.to_owned(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut f, r).expect("record serializes");
        f.write_all(b"\n").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RunRecord>> {
    let f = std::fs::File::open(path).map_err(|source| SearchError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| SearchError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SearchError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
