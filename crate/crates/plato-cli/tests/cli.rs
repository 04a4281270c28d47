use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use plato_cli::manifest::RunManifest;

fn plato(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plato"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = plato(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_owned();
        let syn = root.join("syn");
        ok(&[
            "gen-synth", "--d", "40", "--n", "30", "--communities", "2", "--broader", "2", "--p-intra", "0.2",
            "--seed", "3", "--out", s(&syn),
        ]);
        Fixture { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn data_flags(&self) -> Vec<String> {
        let syn = self.path("syn");
        vec![
            "--data".into(),
            s(&syn.join("dataset.csv")).into(),
            "--kg".into(),
            s(&syn.join("kg.tsv")).into(),
            "--feature-map".into(),
            s(&syn.join("feature_map.tsv")).into(),
            "--c".into(),
            "8".into(),
            "--pretrain-epochs".into(),
            "5".into(),
        ]
    }

    fn run_in(&self, cmd: &[&str], out: &str) -> (Output, PathBuf) {
        let dir = self.path(out);
        let mut args: Vec<String> = cmd.iter().map(|a| a.to_string()).collect();
        args.extend(["--out".into(), s(&dir).into()]);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        (ok(&refs), dir)
    }
}

/// Every file except the manifest, which carries timestamps.
fn artifact_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn assert_same_artifacts(a: &Path, b: &Path) {
    let (fa, fb) = (artifact_bytes(a), artifact_bytes(b));
    assert!(!fa.is_empty());
    assert_eq!(fa.len(), fb.len());
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs between runs");
    }
    let (ma, mb) = (
        RunManifest::read(&a.join("manifest.json")).unwrap(),
        RunManifest::read(&b.join("manifest.json")).unwrap(),
    );
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(ma.inputs, mb.inputs);
    assert_eq!(ma.seeds, mb.seeds);
}

#[test]
fn gen_synth_writes_files_and_a_verifiable_manifest() {
    let f = Fixture::new();
    let syn = f.path("syn");
    let m = RunManifest::read(&syn.join("manifest.json")).unwrap();
    assert_eq!(m.command, "gen-synth");
    assert_eq!(m.outputs.len(), 4);
    m.verify(&syn).unwrap();
    assert_eq!(m.seeds["seed"], 3);
    for o in &m.outputs {
        assert!(syn.join(&o.path).exists());
    }

    std::fs::write(syn.join("kg.tsv"), "tampered\n").unwrap();
    assert!(m.verify(&syn).is_err());
}

#[test]
fn gen_synth_is_deterministic_and_validates() {
    let f = Fixture::new();
    let args = ["gen-synth", "--d", "40", "--n", "30", "--communities", "2", "--broader", "2", "--p-intra", "0.2", "--seed", "3"];
    let (_, again) = f.run_in(&args, "syn2");
    assert_same_artifacts(&f.path("syn"), &again);

    let bad = plato(&["gen-synth", "--d", "0", "--out", s(&f.path("bad"))]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("d must be positive"));
}

#[test]
fn pretrain_defaults_and_missing_kg() {
    let f = Fixture::new();
    let syn = f.path("syn");
    let (_, out) = f.run_in(
        &[
            "pretrain", "--kg", s(&syn.join("kg.tsv")), "--feature-map", s(&syn.join("feature_map.tsv")),
            "--pretrain-epochs", "2",
        ],
        "emb",
    );
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("embeddings.json")).unwrap()).unwrap();
    assert_eq!(table["method"], "complex");
    assert_eq!(table["c"], 200);
    RunManifest::read(&out.join("manifest.json")).unwrap().verify(&out).unwrap();

    let missing = plato(&[
        "pretrain", "--kg", s(&f.path("nope.tsv")), "--feature-map", s(&syn.join("feature_map.tsv")), "--out",
        s(&f.path("e2")),
    ]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn pretrain_is_deterministic_for_every_method() {
    let f = Fixture::new();
    let syn = f.path("syn");
    let (kg, fm) = (syn.join("kg.tsv"), syn.join("feature_map.tsv"));
    for method in ["complex", "distmult", "transe"] {
        let args = [
            "pretrain", "--kg", s(&kg), "--feature-map", s(&fm), "--c",
            "8", "--pretrain-epochs", "5", "--method", method, "--kg-keep-fraction", "0.5", "--kg-drop-seed",
            "3", "--seed", "11",
        ];
        let (_, a) = f.run_in(&args, &format!("{method}-a"));
        let (_, b) = f.run_in(&args, &format!("{method}-b"));
        assert_same_artifacts(&a, &b);
    }
}

#[test]
fn train_is_deterministic_in_every_ablation() {
    let f = Fixture::new();
    for ablation in ["none", "no-mp", "no-kg", "feature-only-kg", "plato-lr"] {
        let mut args = vec!["train".to_owned(), "--ablation".into(), ablation.into()];
        args.extend(f.data_flags());
        args.extend(["--max-epochs", "8", "--seed", "5", "--split-seed", "2"].map(String::from));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (_, a) = f.run_in(&refs, &format!("{ablation}-a"));
        let (_, b) = f.run_in(&refs, &format!("{ablation}-b"));
        assert_same_artifacts(&a, &b);
        let metrics: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
        assert!(metrics["test_r"].as_f64().unwrap().abs() <= 1.0);
        assert_eq!(a.join("embeddings.json").exists(), ablation != "no-kg");
    }
}

#[test]
fn train_without_kg_needs_no_graph_files() {
    let f = Fixture::new();
    let data = f.path("syn").join("dataset.csv");
    let (_, out) = f.run_in(&["train", "--ablation", "no-kg", "--data", s(&data), "--max-epochs", "3"], "mlp");
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["kind"], "mlp");

    let plato_without_kg = plato(&["train", "--data", s(&data), "--out", s(&f.path("x"))]);
    assert_eq!(code(&plato_without_kg), 2);
}

#[test]
fn train_reuses_a_pretrained_artifact() {
    let f = Fixture::new();
    let mut args = vec!["train".to_owned()];
    args.extend(f.data_flags());
    args.extend(["--max-epochs", "4"].map(String::from));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let (_, internal) = f.run_in(&refs, "internal");

    // Retraining from the artifact written by the first run gives the same model.
    let emb = internal.join("embeddings.json");
    let mut with = args.clone();
    with.extend(["--embeddings".into(), s(&emb).into()]);
    let refs: Vec<&str> = with.iter().map(String::as_str).collect();
    let (_, external) = f.run_in(&refs, "external");
    assert_eq!(
        std::fs::read(internal.join("model.params.f32")).unwrap(),
        std::fs::read(external.join("model.params.f32")).unwrap()
    );
}

#[test]
fn exit_codes_distinguish_usage_from_runtime_failures() {
    let f = Fixture::new();
    let mut args = vec!["train".to_owned()];
    args.extend(f.data_flags());
    args.extend(["--lr", "1e200", "--out"].map(String::from));
    args.push(s(&f.path("diverged")).into());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let diverged = plato(&refs);
    assert_eq!(code(&diverged), 1, "{}", String::from_utf8_lossy(&diverged.stderr));

    assert_eq!(code(&plato(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&plato(&["frobnicate"])), 2);
    let unknown = plato(&["train", "--data", "x.csv", "--ablation", "full", "--out", "y"]);
    assert_eq!(code(&unknown), 2);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("ablation"));
}

fn read_records(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn search_routes_models_and_is_deterministic() {
    let f = Fixture::new();
    for model in ["ridge", "lasso", "graphnet", "nc-lasso", "network-lasso", "mlp", "plato"] {
        let mut args = vec!["search".to_owned(), "--model".into(), model.into()];
        args.extend(f.data_flags());
        args.extend(["--trials", "2", "--splits", "2", "--repeats", "1", "--seed", "4"].map(String::from));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (_, a) = f.run_in(&refs, &format!("{model}-a"));
        let (_, b) = f.run_in(&refs, &format!("{model}-b"));
        assert_same_artifacts(&a, &b);
        let recs = read_records(&a.join("report.jsonl"));
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r["model"].as_str().unwrap().starts_with(model)));
    }
}

#[test]
fn search_summary_uses_nine_runs_and_jobs_do_not_matter() {
    let f = Fixture::new();
    let mut args = vec!["search".to_owned(), "--model".into(), "ridge".into()];
    args.extend(f.data_flags());
    args.extend(["--trials", "3"].map(String::from));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let (_, one) = f.run_in(&refs, "jobs1");
    let mut par = refs.clone();
    par.extend(["--jobs", "3"]);
    let (_, three) = f.run_in(&par, "jobs3");
    assert_eq!(
        std::fs::read(one.join("report.jsonl")).unwrap(),
        std::fs::read(three.join("report.jsonl")).unwrap()
    );

    let summary: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(one.join("summary.json")).unwrap()).unwrap();
    let best = &summary[0];
    assert_eq!(best["runs"], 9);
    let tests: Vec<f64> = read_records(&one.join("report.jsonl"))
        .iter()
        .filter(|r| r["trial"] == best["trial"])
        .map(|r| r["test_r"].as_f64().unwrap())
        .collect();
    assert_eq!(tests.len(), 9);
    let mean = tests.iter().sum::<f64>() / 9.0;
    let std = (tests.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
    assert!((best["mean_test_r"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((best["std_test_r"].as_f64().unwrap() - std).abs() < 1e-12);
}

#[test]
fn report_merges_sorts_and_formats() {
    let f = Fixture::new();
    let mut reports = Vec::new();
    for model in ["ridge", "lasso"] {
        let mut args = vec!["search".to_owned(), "--model".into(), model.into()];
        args.extend(f.data_flags());
        args.extend(["--trials", "2", "--splits", "2", "--repeats", "1"].map(String::from));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (_, dir) = f.run_in(&refs, model);
        reports.push(dir.join("report.jsonl"));
    }
    let out = ok(&["report", "--input", s(&reports[0]), "--input", s(&reports[1]), "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let means: Vec<f64> = rows.iter().map(|r| r[7].parse().unwrap()).collect();
    assert!(means[0] >= means[1]);
    for r in &rows {
        for cell in &r[6..] {
            assert_eq!(cell.split('.').nth(1).map(str::len), Some(3), "{cell}");
        }
    }

    let table = String::from_utf8(ok(&["report", "--input", s(&reports[0])]).stdout).unwrap();
    assert!(table.contains(" ± "));

    let (_, dir) = f.run_in(&["report", "--input", s(&reports[0]), "--input", s(&reports[1])], "rep");
    RunManifest::read(&dir.join("manifest.json")).unwrap().verify(&dir).unwrap();

    let empty = f.path("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&plato(&["report", "--input", s(&empty)])), 2);
    assert_eq!(code(&plato(&["report"])), 2);
}
