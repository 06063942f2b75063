use std::path::{Path, PathBuf};

use anyhow::Result;
use tripletqa::analysis::{attention_stats, correlation, grouped_f1, hallucination_probe, GroupKey, PlotSeries};
use tripletqa::{EvalReport, ModelBundle, TripletExample};

use super::{ensure_dir, load_corpus, write};
use crate::manifest::RunManifest;
use crate::{AnalysisKind, AnalyzeArgs, UsageError};

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, kind: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| UsageError(format!("--kind {kind} requires --{flag}")).into())
}

fn model_inputs(
    args: &AnalyzeArgs,
    kind: &str,
    manifest: &mut RunManifest,
) -> Result<(ModelBundle, Vec<TripletExample>)> {
    let ckpt = required(&args.checkpoint, "checkpoint", kind)?;
    let data = required(&args.data, "data", kind)?;
    let bundle = ModelBundle::load(ckpt)?;
    manifest.input(ckpt)?;
    let corpus = load_corpus(data)?;
    manifest.input(data)?;
    manifest.config_hash = Some(bundle.config.hash());
    Ok((bundle, corpus))
}

pub fn run(args: AnalyzeArgs, argv: &[String]) -> Result<()> {
    let kind = match args.kind {
        AnalysisKind::Groups => "groups",
        AnalysisKind::Correlation => "correlation",
        AnalysisKind::Hallucination => "hallucination",
        AnalysisKind::Attention => "attention",
    };
    let mut manifest = RunManifest::start(&format!("analyze-{kind}"), argv);
    let (report, plots): (serde_json::Value, Vec<PlotSeries>) = match args.kind {
        AnalysisKind::Groups | AnalysisKind::Correlation => {
            let path = required(&args.report, "report", kind)?;
            let eval = EvalReport::load(path)?;
            manifest.input(path)?;
            manifest.config_hash = eval.config_hash.clone();
            if args.kind == AnalysisKind::Groups {
                let key: GroupKey = args
                    .key
                    .parse()
                    .map_err(|e: tripletqa::Error| UsageError(e.to_string()))?;
                let r = grouped_f1(&eval.records, key)?;
                (serde_json::to_value(&r)?, vec![r.plot()])
            } else {
                let r = correlation(&eval.records, args.bins)?;
                if r.reduced {
                    eprintln!("only {} usable records; using {} bins", r.bins.len(), r.bins.len());
                }
                (serde_json::to_value(&r)?, r.plots())
            }
        }
        AnalysisKind::Hallucination => {
            let (b, corpus) = model_inputs(&args, kind, &mut manifest)?;
            let r = hallucination_probe(&b.model, &b.tokenizer, &b.prompter, &corpus, args.max_new_tokens)?;
            (serde_json::to_value(&r)?, Vec::new())
        }
        AnalysisKind::Attention => {
            let (b, corpus) = model_inputs(&args, kind, &mut manifest)?;
            let r = attention_stats(&b.model, &b.tokenizer, &b.prompter, &corpus)?;
            (serde_json::to_value(&r)?, r.plots())
        }
    };

    ensure_dir(&args.out)?;
    let report_path = args.out.join(format!("{kind}.json"));
    write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    manifest.output(&report_path)?;
    for plot in plots {
        let path = args.out.join(format!("{}.tsv", plot.name));
        write(&path, plot.to_tsv())?;
        manifest.output(&path)?;
    }
    eprintln!("wrote {}", report_path.display());
    manifest.finish(&args.out.join(format!("analyze-{kind}.manifest.json")))
}
