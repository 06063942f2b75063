use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tripletqa::corpus::synthetic::evidence_corpus;
use tripletqa::corpus::write_jsonl;

fn tripletqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tripletqa"))
        .args(args)
        .env_remove("TRIPLETQA_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn error_category(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not a JSON error: {stderr}"));
    v["error"]["category"].as_str().unwrap().to_string()
}

const TINY: &[&str] = &[
    "--set",
    "model.adaptation=\"full\"",
    "--set",
    "model.layers=1",
    "--set",
    "model.heads=1",
    "--set",
    "model.d_model=8",
    "--set",
    "model.max_positions=128",
    "--set",
    "data.max_len=128",
    "--set",
    "data.batch_size=2",
    "--set",
    "data.max_steps=3",
];

fn train_tiny(dir: &Path, extra: &[&str]) -> Output {
    let data = dir.join("train.jsonl");
    if !data.exists() {
        write_jsonl(&data, &evidence_corpus(4, 1)).unwrap();
    }
    let out = dir.join("run");
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    tripletqa(&args)
}

#[test]
fn no_arguments_is_a_usage_error() {
    assert_eq!(tripletqa(&[]).status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(tripletqa(&["train", "--bogus"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tripletqa(&[
        "prepare-data",
        "--format",
        "multirc",
        "--in",
        "/nonexistent/multirc.json",
        "--out",
        dir.path().join("x.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_category(&out), "io");
}

#[test]
fn bad_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), &["--set", "optim.lr=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_category(&out), "usage");
    let out = train_tiny(dir.path(), &["--set", "model.nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prepare_writes_corpus_stats_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("osprey.jsonl");
    let out = tripletqa(&[
        "prepare-data",
        "--format",
        "multirc",
        "--in",
        &fixture("multirc_osprey.json"),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let corpus = tripletqa::corpus::read_jsonl(&out_path).unwrap();
    assert!(!corpus.is_empty());
    let stats = read_json(&dir.path().join("osprey.jsonl.stats.json"));
    assert_eq!(stats["examples"].as_u64(), Some(corpus.len() as u64));
    let manifest = read_json(&dir.path().join("osprey.jsonl.manifest.json"));
    assert_eq!(manifest["command"], "prepare-data");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn prepare_reuses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let run = |name: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_tripletqa"))
            .args([
                "prepare-data",
                "--format",
                "multirc",
                "--in",
                &fixture("multirc_osprey.json"),
                "--out",
                dir.path().join(name).to_str().unwrap(),
            ])
            .env("TRIPLETQA_CACHE_DIR", &cache)
            .output()
            .unwrap();
        assert!(out.status.success());
        read_json(&dir.path().join(format!("{name}.manifest.json")))["details"]["cache_hit"].clone()
    };
    assert_eq!(run("a.jsonl"), Value::Bool(false));
    assert_eq!(run("b.jsonl"), Value::Bool(true));
    assert_eq!(
        std::fs::read(dir.path().join("a.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b.jsonl")).unwrap()
    );
}

#[test]
fn train_evaluate_analyze_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), &["--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in [
        "config.toml",
        "train_log.jsonl",
        "best.ckpt",
        "last.ckpt",
        "train.manifest.json",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("data.seed = 5 (cli)"), "{stderr}");
    assert!(stderr.contains("model.d_model = 8 (cli)"));
    assert!(stderr.contains("optim.lr = 0.00003 (default)") || stderr.contains("optim.lr = 3e-5 (default)"));

    let manifest = read_json(&run.join("train.manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_sources"]["data.seed"], "cli");
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("\"event\":\"step\"")).count(), 3);

    let data = dir.path().join("train.jsonl");
    let ckpt = run.join("last.ckpt");
    let eval_dir = dir.path().join("eval");
    let out = tripletqa(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--tasks",
        "qa,evidence",
        "--max-new-tokens",
        "4",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&eval_dir.join("report.json"));
    assert_eq!(report["examples"], 4);
    assert_eq!(report["config_hash"], manifest["config_hash"]);
    assert!(eval_dir.join("predictions.jsonl").exists());

    let analysis = dir.path().join("analysis");
    let out = tripletqa(&[
        "analyze",
        "--kind",
        "groups",
        "--report",
        eval_dir.join("report.json").to_str().unwrap(),
        "--out",
        analysis.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        read_json(&analysis.join("groups.json"))["groups"]
            .as_array()
            .unwrap()
            .len(),
        4
    );

    let out = tripletqa(&[
        "analyze",
        "--kind",
        "attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        analysis.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(analysis.join("analyze-attention.manifest.json").exists());

    let out = tripletqa(&[
        "analyze",
        "--kind",
        "hallucination",
        "--out",
        analysis.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let preds = dir.path().join("gen.jsonl");
    let out = tripletqa(&[
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--task",
        "qa-no-document",
        "--max-new-tokens",
        "3",
        "--out",
        preds.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 4);
}

#[test]
fn resume_appends_and_rejects_other_configs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_tiny(dir.path(), &[]).status.success());
    let run = dir.path().join("run");
    let ckpt = dir.path().join("done.ckpt");
    std::fs::copy(run.join("last.ckpt"), &ckpt).unwrap();
    let before = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();

    let out = train_tiny(dir.path(), &["--resume", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let after = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert!(after.starts_with(&before));
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(run.join("last.ckpt")).unwrap()
    );

    let out = train_tiny(dir.path(), &["--set", "optim.lr=1", "--resume", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_category(&out), "checkpoint");
}

#[test]
fn sweep_writes_125_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let out = tripletqa(&[
        "sweep",
        "--grid",
        "0.1,0.3,0.5,0.7,1.0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("125 configurations"));
    let index = std::fs::read_to_string(dir.path().join("sweep.jsonl")).unwrap();
    let hashes: std::collections::BTreeSet<_> = index
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["config_hash"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(hashes.len(), 125);
    assert_eq!(std::fs::read_dir(dir.path().join("configs")).unwrap().count(), 125);
}
