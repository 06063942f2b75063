use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;
use sha2::{Digest, Sha256};
use tripletqa::corpus::{compute_stats, load_multirc, load_qasper, subsample_stratified, write_jsonl, MultiRcOptions};

use super::write;
use crate::manifest::RunManifest;
use crate::{Format, PrepareArgs, CACHE_ENV};

fn cache_key(args: &PrepareArgs) -> Result<String> {
    let data = std::fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let mut h = Sha256::new();
    h.update(&data);
    h.update(format!(
        "{:?}|{}|{:?}|{}",
        args.format, args.join_answers, args.subsample, args.seed
    ));
    Ok(hex::encode(h.finalize()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn run(args: PrepareArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::start("prepare-data", argv);
    manifest.input(&args.input)?;
    manifest.seed = Some(args.seed);

    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let cached = match &cache {
        Some(dir) => Some(dir.join(format!("{}.jsonl", cache_key(&args)?))),
        None => None,
    };

    let outcome = match args.format {
        Format::Multirc => load_multirc(
            &args.input,
            MultiRcOptions {
                join_answers: args.join_answers,
            },
        )?,
        Format::Qasper => load_qasper(&args.input)?,
    };
    let examples = match args.subsample {
        Some(n) => subsample_stratified(&outcome.examples, n, args.seed),
        None => outcome.examples.clone(),
    };

    let cache_hit = cached.as_ref().is_some_and(|p| p.exists());
    match (&cached, cache_hit) {
        (Some(p), true) => {
            std::fs::copy(p, &args.out).with_context(|| format!("copying cached {}", p.display()))?;
        }
        _ => {
            write_jsonl(&args.out, &examples)?;
            if let Some(p) = &cached {
                super::ensure_dir(p.parent().expect("cache file has a parent"))?;
                std::fs::copy(&args.out, p).with_context(|| format!("filling cache {}", p.display()))?;
            }
        }
    }
    manifest.output(&args.out)?;

    let stats_path = sibling(&args.out, ".stats.json");
    let stats = if examples.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::to_value(compute_stats(&examples)?)?
    };
    let summary = json!({
        "examples": examples.len(),
        "loaded": outcome.examples.len(),
        "skipped_unanswered": outcome.skipped_unanswered,
        "missing_evidence": outcome.missing_evidence,
        "unmatched_evidence": outcome.unmatched_evidence,
        "rejected": outcome.rejected,
        "stats": stats,
    });
    write(&stats_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    manifest.output(&stats_path)?;
    manifest.details = json!({"cache_hit": cache_hit});

    eprintln!(
        "prepared {} examples ({} skipped without answers, {} rejected, {} without evidence)",
        examples.len(),
        outcome.skipped_unanswered,
        outcome.rejected.len(),
        outcome.missing_evidence
    );
    manifest.finish(&sibling(&args.out, ".manifest.json"))
}
