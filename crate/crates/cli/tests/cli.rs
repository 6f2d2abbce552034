use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lesicin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesicin"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lesicin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

/// Synthetic corpus split into train/validation/test under `dir`.
fn prepared(dir: &Path, n_docs: &str) {
    let data = dir.join("data");
    ok(&["synth", "--n-docs", n_docs, "--n-sections", "6", "--seed", "4", "--out-dir", s(&data)]);
    ok(&[
        "split",
        "--facts",
        s(&data.join("facts.jsonl")),
        "--hierarchy",
        s(&data.join("hierarchy.json")),
        "--out-dir",
        s(&dir.join("split")),
    ]);
}

#[test]
fn split_writes_folds_and_report() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path(), "200");
    let split = dir.path().join("split");
    let lines = |f: &str| fs::read_to_string(split.join(f)).unwrap().lines().count();
    assert_eq!(lines("train.jsonl") + lines("validation.jsonl") + lines("test.jsonl"), 200);
    let report = json(&split.join("split_report.json"));
    assert_eq!(report["fold_sizes"].as_array().unwrap().len(), 3);
    assert!(split.join("effective_config.toml").exists());
}

#[test]
fn split_rejects_bad_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--n-docs", "30", "--out-dir", s(&data)]);
    let out = lesicin(&[
        "split",
        "--facts",
        s(&data.join("facts.jsonl")),
        "--hierarchy",
        s(&data.join("hierarchy.json")),
        "--ratios",
        "0.5,0.6,0.1",
        "--out-dir",
        s(&dir.path().join("split")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum to 1"));
}

#[test]
fn graph_takes_training_facts_only() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path(), "200");
    let split = dir.path().join("split");
    let h = dir.path().join("data/hierarchy.json");
    let graph_dir = dir.path().join("graph");

    let refused = lesicin(&["build-graph", "--facts", s(&split.join("test.jsonl")), "--hierarchy", s(&h), "--out-dir", s(&graph_dir)]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("training facts only"));

    let renamed = split.join("more.jsonl");
    fs::copy(split.join("validation.jsonl"), &renamed).unwrap();
    let refused = lesicin(&["build-graph", "--facts", s(&renamed), "--hierarchy", s(&h), "--out-dir", s(&graph_dir)]);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("training facts only"));

    ok(&["build-graph", "--facts", s(&split.join("train.jsonl")), "--hierarchy", s(&h), "--out-dir", s(&graph_dir)]);
    let stats = json(&graph_dir.join("graph_stats.json"));
    let train = fs::read_to_string(split.join("train.jsonl")).unwrap().lines().count();
    assert_eq!(stats["nodes"]["F"].as_u64().unwrap() as usize, train);
    assert_eq!(stats["nodes"]["S"].as_u64().unwrap(), 6);
    assert!(graph_dir.join("graph.json").exists());
}

#[test]
fn ablation_shows_in_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["synth", "--n-docs", "10", "--ablation", "S", "--out-dir", s(dir.path())]);
    assert!(stdout.contains("theta_s = 0.0"));
    assert!(stdout.contains("ablation = \"S\""));
}

#[test]
fn train_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path(), "160");
    let split = dir.path().join("split");
    let h = dir.path().join("data/hierarchy.json");
    let run = dir.path().join("run");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "lr = 0.01\nepochs = 3\ntau = 0.3\nk = 4\n").unwrap();
    ok(&[
        "train",
        "--desk-scale",
        "--config",
        s(&cfg),
        "--train",
        s(&split.join("train.jsonl")),
        "--validation",
        s(&split.join("validation.jsonl")),
        "--hierarchy",
        s(&h),
        "--out-dir",
        s(&run),
    ]);
    let epochs = fs::read_to_string(run.join("epochs.jsonl")).unwrap();
    assert_eq!(epochs.lines().count(), 3);
    let summary = json(&run.join("training_summary.json"));
    let logged = summary["best_val_macro_f1"].as_f64().unwrap();

    let checkpoint = run.join("checkpoint.json");
    let eval_dir = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&checkpoint),
        "--facts",
        s(&split.join("validation.jsonl")),
        "--out-dir",
        s(&eval_dir),
    ]);
    let report = json(&eval_dir.join("eval_report.json"));
    assert!((report["macro_f1"].as_f64().unwrap() - logged).abs() < 1e-6);

    let query = dir.path().join("query.jsonl");
    fs::write(&query, "{\"id\": \"q1\", \"text\": \"an unseen fact description\"}\n").unwrap();
    let stdout = ok(&[
        "predict",
        "--checkpoint",
        s(&checkpoint),
        "--facts",
        s(&query),
        "--tau",
        "0.05",
        "--out-dir",
        s(&dir.path().join("pred")),
    ]);
    let line = stdout.lines().find(|l| l.starts_with("q1\t")).expect("prediction line");
    for item in line["q1\t".len()..].split_whitespace() {
        let (id, score) = item.split_once(':').unwrap();
        assert!(id.starts_with('S'));
        assert!(score.parse::<f64>().unwrap() >= 0.05);
    }

    let refused = lesicin(&["evaluate", "--ablation", "E", "--checkpoint", s(&checkpoint), "--facts", s(&query), "--out-dir", s(&eval_dir)]);
    assert!(!refused.status.success());
}
