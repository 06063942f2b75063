use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;
use tripletqa::trainer::sweep::{sweep_configs, SweepGrid};
use tripletqa::TrainConfig;

use super::{ensure_dir, write};
use crate::manifest::RunManifest;
use crate::{SweepArgs, UsageError};

fn parse_grid(raw: &str, manifest: &mut RunManifest) -> Result<SweepGrid> {
    let path = Path::new(raw);
    if path.is_file() {
        manifest.input(path)?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return SweepGrid::from_toml(&text).map_err(|e| UsageError(e.to_string()).into());
    }
    let values: Vec<f64> = raw
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            UsageError(format!(
                "--grid expects comma-separated numbers or a grid file, got {raw:?}"
            ))
        })?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(UsageError("grid values must be non-negative numbers".into()).into());
    }
    Ok(SweepGrid {
        alpha_qae: values.clone(),
        alpha_qea: values.clone(),
        alpha_eaq: values,
    })
}

pub fn run(args: SweepArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::start("sweep", argv);
    let grid = parse_grid(&args.grid, &mut manifest)?;
    let base = match &args.config {
        Some(p) => {
            manifest.input(p)?;
            TrainConfig::load(p).map_err(|e| UsageError(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    manifest.config_hash = Some(base.hash());
    manifest.seed = Some(base.data.seed);

    let configs = sweep_configs(&base, &grid);
    let dir = args.out.join("configs");
    ensure_dir(&dir)?;
    let mut index = String::new();
    for (i, cfg) in configs.iter().enumerate() {
        let path = dir.join(format!("run-{i:03}.toml"));
        write(&path, cfg.to_toml())?;
        let entry = json!({
            "index": i,
            "alpha_qae": cfg.loss.alpha_qae,
            "alpha_qea": cfg.loss.alpha_qea,
            "alpha_eaq": cfg.loss.alpha_eaq,
            "config_hash": cfg.hash(),
            "config": format!("configs/run-{i:03}.toml"),
        });
        index.push_str(&entry.to_string());
        index.push('\n');
    }
    let index_path = args.out.join("sweep.jsonl");
    write(&index_path, index)?;
    manifest.output(&index_path)?;
    manifest.details = json!({"configurations": configs.len()});
    println!("{} configurations written to {}", configs.len(), dir.display());
    manifest.finish(&args.out.join("sweep.manifest.json"))
}
