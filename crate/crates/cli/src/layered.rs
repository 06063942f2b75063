//! Configuration layering: built-in default, then config file, then flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use toml::{Table, Value};
use tripletqa::trainer::{Ablation, TrainConfig};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Cli,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Cli => "cli",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: TrainConfig,
    pub sources: BTreeMap<String, Source>,
}

impl Resolved {
    /// One `key = value (source)` line per resolved key.
    pub fn describe(&self) -> Vec<String> {
        let flat = flatten(&table_of(&self.config));
        flat.iter()
            .map(|(k, v)| {
                let src = self.sources.get(k).copied().unwrap_or(Source::Default);
                format!("{k} = {v} ({src})")
            })
            .collect()
    }

    pub fn source_names(&self) -> BTreeMap<String, String> {
        self.sources.iter().map(|(k, v)| (k.clone(), v.to_string())).collect()
    }
}

fn table_of(cfg: &TrainConfig) -> Table {
    match Value::try_from(cfg).expect("config serializes") {
        Value::Table(t) => t,
        _ => unreachable!("config is a struct"),
    }
}

fn flatten(table: &Table) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, t: &Table, out: &mut BTreeMap<String, Value>) {
        for (k, v) in t {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                Value::Table(inner) => walk(&key, inner, out),
                other => {
                    out.insert(key, other.clone());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out);
    out
}

fn insert_path(root: &mut Table, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = root;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("intermediate key is a table");
    }
    cur.insert(last.to_string(), value);
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to a
/// bare string.
pub fn parse_set(raw: &str) -> Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {raw:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(UsageError(format!("invalid configuration key {key:?}")).into());
    }
    let value = value.trim();
    let parsed = toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

pub fn resolve(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    ablation: Option<Ablation>,
) -> Result<Resolved> {
    let mut sources: BTreeMap<String, Source> = flatten(&table_of(&TrainConfig::default()))
        .into_keys()
        .map(|k| (k, Source::Default))
        .collect();
    let mut merged = table_of(&TrainConfig::default());
    if let Some(path) = file {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: Table = toml::from_str(&raw).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        for (k, v) in flatten(&table) {
            insert_path(&mut merged, &k, v);
            sources.insert(k, Source::File);
        }
    }
    for raw in sets {
        let (k, v) = parse_set(raw)?;
        insert_path(&mut merged, &k, v);
        sources.insert(k, Source::Cli);
    }
    if let Some(seed) = seed {
        insert_path(&mut merged, "data.seed", Value::Integer(seed as i64));
        sources.insert("data.seed".into(), Source::Cli);
    }
    let mut config: TrainConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {e}")))?;
    if let Some(a) = ablation {
        let before = config.loss.clone();
        a.apply(&mut config.loss);
        for (key, changed) in [
            ("loss.use_qae", before.use_qae != config.loss.use_qae),
            ("loss.use_eaq", before.use_eaq != config.loss.use_eaq),
            ("loss.use_kl", before.use_kl != config.loss.use_kl),
        ] {
            if changed {
                sources.insert(key.into(), Source::Cli);
            }
        }
    }
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(Resolved { config, sources })
}
