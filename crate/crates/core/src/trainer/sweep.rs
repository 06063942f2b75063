use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};

pub const SWEEP_VALUES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 1.0];

/// Values tried for each loss weight. Every combination is one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha_qae: Vec<f64>,
    pub alpha_qea: Vec<f64>,
    pub alpha_eaq: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alpha_qae: SWEEP_VALUES.to_vec(),
            alpha_qea: SWEEP_VALUES.to_vec(),
            alpha_eaq: SWEEP_VALUES.to_vec(),
        }
    }
}

impl SweepGrid {
    pub fn from_toml(raw: &str) -> Result<Self> {
        let grid: Self = toml::from_str(raw).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if grid.alpha_qae.is_empty() || grid.alpha_qea.is_empty() || grid.alpha_eaq.is_empty() {
            return Err(Error::InvalidConfig("sweep axes must be non-empty".into()));
        }
        Ok(grid)
    }

    /// `(α_qae, α_qea, α_eaq)` triples in lexicographic order.
    pub fn points(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        for &a in &self.alpha_qae {
            for &b in &self.alpha_qea {
                for &c in &self.alpha_eaq {
                    out.push([a, b, c]);
                }
            }
        }
        out
    }
}

/// The default 5×5×5 grid.
pub fn sweep_grid() -> Vec<[f64; 3]> {
    SweepGrid::default().points()
}

pub fn sweep_configs(base: &TrainConfig, grid: &SweepGrid) -> Vec<TrainConfig> {
    grid.points()
        .into_iter()
        .map(|[a, b, c]| {
            let mut cfg = base.clone();
            cfg.loss.alpha_qae = a;
            cfg.loss.alpha_qea = b;
            cfg.loss.alpha_eaq = c;
            cfg
        })
        .collect()
}
