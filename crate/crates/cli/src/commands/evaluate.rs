use anyhow::Result;
use serde_json::json;
use tripletqa::evaluator::{evaluate, write_predictions, EvalOptions, EvalTasks};
use tripletqa::ModelBundle;

use super::{ensure_dir, load_corpus};
use crate::manifest::RunManifest;
use crate::{EvaluateArgs, UsageError};

pub fn run(args: EvaluateArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::start("evaluate", argv);
    let tasks: EvalTasks = args
        .tasks
        .parse()
        .map_err(|e: tripletqa::Error| UsageError(e.to_string()))?;
    let bundle = ModelBundle::load(&args.checkpoint)?;
    manifest.input(&args.checkpoint)?;
    let corpus = load_corpus(&args.data)?;
    manifest.input(&args.data)?;
    manifest.config_hash = Some(bundle.config.hash());
    manifest.seed = Some(bundle.config.data.seed);

    let options = EvalOptions {
        tasks,
        with_evidence: args.with_evidence,
        max_new_tokens: args.max_new_tokens,
    };
    let (mut report, predictions) = evaluate(&bundle.model, &bundle.tokenizer, &bundle.prompter, &corpus, &options)?;
    report.config_hash = Some(bundle.config.hash());
    for f in &report.failures {
        eprintln!("generation failed for {} ({}): {}", f.id, f.task, f.reason);
    }

    ensure_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    report.save(&report_path)?;
    let pred_path = args.out.join("predictions.jsonl");
    write_predictions(&pred_path, &predictions)?;
    manifest.output(&report_path)?;
    manifest.output(&pred_path)?;
    manifest.details = json!({
        "em": report.em,
        "f1": report.f1,
        "evidence_f1": report.evidence_f1,
        "failures": report.failures.len(),
    });
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
    eprintln!(
        "EM {} F1 {} evidence F1 {} over {} examples",
        fmt(report.em),
        fmt(report.f1),
        fmt(report.evidence_f1),
        report.examples
    );
    manifest.finish(&args.out.join("evaluate.manifest.json"))
}
