use std::fs::OpenOptions;
use std::io::{BufWriter, Write};

use anyhow::{Context, Result};
use serde_json::json;
use tripletqa::prompting::{build_tokenizer, TemplateSet};
use tripletqa::trainer::Ablation;
use tripletqa::{Checkpoint, ModelBundle, Trainer};

use super::{ensure_dir, load_corpus, write};
use crate::layered::resolve;
use crate::manifest::RunManifest;
use crate::{TrainArgs, UsageError};

pub fn run(args: TrainArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::start("train", argv);
    let ablation = match &args.ablation {
        Some(name) => Some(name.parse::<Ablation>().map_err(|e| UsageError(e.to_string()))?),
        None => None,
    };
    let resolved = resolve(args.config.as_deref(), &args.sets, args.seed, ablation)?;
    for line in resolved.describe() {
        eprintln!("config {line}");
    }
    let config = resolved.config.clone();
    manifest.config_hash = Some(config.hash());
    manifest.seed = Some(config.data.seed);
    manifest.config_sources = resolved.source_names();
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }

    let train = load_corpus(&args.data)?;
    manifest.input(&args.data)?;
    let dev = match &args.dev {
        Some(p) => {
            manifest.input(p)?;
            load_corpus(p)?
        }
        None => Vec::new(),
    };
    let templates = match &args.templates {
        Some(p) => {
            manifest.input(p)?;
            TemplateSet::load(p)?
        }
        None => TemplateSet::default(),
    };

    let (tokenizer, init_model) = match &args.init {
        Some(p) => {
            manifest.input(p)?;
            let bundle = ModelBundle::load(p)?;
            (bundle.tokenizer, Some(bundle.model))
        }
        None => (build_tokenizer(train.iter().chain(&dev), &templates), None),
    };
    let trainer = Trainer::new(config.clone(), tokenizer, templates, &train, &dev)?;
    let mut state = match &args.resume {
        Some(p) => {
            manifest.input(p)?;
            trainer.resume(&Checkpoint::load(p)?)?
        }
        None => trainer.init_state(init_model)?,
    };

    ensure_dir(&args.out)?;
    let config_path = args.out.join("config.toml");
    write(&config_path, config.to_toml())?;
    let log_path = args.out.join("train_log.jsonl");
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume.is_some())
        .truncate(args.resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let best_path = args.out.join("best.ckpt");
    let last_path = args.out.join("last.ckpt");

    eprintln!(
        "training {} examples for {} steps ({} trainable parameters)",
        train.len(),
        trainer.total_steps(),
        state.model.params.count_trainable(config.model.adaptation)
    );
    let summary = trainer.run(
        &mut state,
        &mut log,
        args.checkpoint_every,
        &mut |s| trainer.checkpoint(s).save(&best_path),
        &mut |s| trainer.checkpoint(s).save(&last_path),
    )?;
    log.flush().with_context(|| format!("writing {}", log_path.display()))?;
    drop(log);
    trainer.checkpoint(&state).save(&last_path)?;

    for p in [&config_path, &log_path, &best_path, &last_path] {
        if p.exists() {
            manifest.output(p)?;
        }
    }
    manifest.details = json!({
        "final_step": summary.final_step,
        "best_step": summary.best_step,
        "best_selection_l_seq": summary.best_score,
        "final_losses": summary.last.as_ref().map(|o| o.losses),
    });
    if let Some(last) = &summary.last {
        eprintln!(
            "step {} l_seq {:.4} l_total {:.4}",
            summary.final_step, last.losses.l_seq, last.losses.l_total
        );
    }
    manifest.finish(&args.out.join("train.manifest.json"))
}
