//! Causal language model with learnable key/value prefix adapters.
//!
//! [`Transformer`] is the bundled toy backbone. Anything implementing
//! [`LanguageModel`] can stand in for it at evaluation and analysis time.

pub mod checkpoint;
pub mod params;
pub mod scripted;
pub mod transformer;

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use params::{LayerParams, ModelParams, ParamGroup};
pub use scripted::ScriptedModel;
pub use transformer::{ForwardCache, Transformer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Prefix tokens per layer; 0 disables adapters.
    pub n_adapters: usize,
    /// Rank of the low-rank query/value updates; 0 disables them.
    pub lora_rank: usize,
    /// Low-rank update scale numerator (update is scaled by `lora_alpha / lora_rank`).
    pub lora_alpha: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            d_model: 64,
            vocab_size: 0,
            max_positions: 512,
            n_adapters: 16,
            lora_rank: 0,
            lora_alpha: 16.0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 {
            return bad("layers, heads and d_model must be positive");
        }
        if self.d_model % self.heads != 0 {
            return bad("d_model must be divisible by heads");
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must cover the special tokens");
        }
        if self.max_positions == 0 {
            return bad("max_positions must be positive");
        }
        if self.lora_rank > 0 && !(self.lora_alpha.is_finite() && self.lora_alpha > 0.0) {
            return bad("lora_alpha must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn lora_scale(&self) -> f64 {
        if self.lora_rank == 0 {
            0.0
        } else {
            self.lora_alpha / self.lora_rank as f64
        }
    }
}

/// Which parameters the optimizer may update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    /// Only the per-layer key/value prefixes.
    #[default]
    Adapters,
    /// Only the low-rank query/value factors.
    Lora,
    /// Everything.
    Full,
}

impl AdaptationMode {
    pub fn trains(self, group: ParamGroup) -> bool {
        match self {
            AdaptationMode::Adapters => group == ParamGroup::Adapter,
            AdaptationMode::Lora => group == ParamGroup::LowRank,
            AdaptationMode::Full => true,
        }
    }
}

impl std::str::FromStr for AdaptationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adapters" => Ok(Self::Adapters),
            "lora" => Ok(Self::Lora),
            "full" => Ok(Self::Full),
            other => Err(Error::invalid(format!("unknown adaptation mode {other:?}"))),
        }
    }
}

/// Closed-form trainable parameter count.
pub fn count_trainable(config: &BackboneConfig, mode: AdaptationMode) -> u64 {
    let l = config.layers as u64;
    let d = config.d_model as u64;
    match mode {
        AdaptationMode::Adapters => 2 * l * config.n_adapters as u64 * d,
        // rank-r factors (d×r and r×d) on the query and value projections
        AdaptationMode::Lora => l * 2 * (2 * config.lora_rank as u64 * d),
        AdaptationMode::Full => total_params(config),
    }
}

/// Closed-form count of every parameter in the model.
pub fn total_params(config: &BackboneConfig) -> u64 {
    let l = config.layers as u64;
    let d = config.d_model as u64;
    let v = config.vocab_size as u64;
    let p = config.max_positions as u64;
    let m = config.mlp_dim() as u64;
    let per_layer = 2 * d // norm 1
        + 4 * d * d // q, k, v, o
        + 2 * d // norm 2
        + d * m + m // up
        + m * d + d // down
        + 2 * config.n_adapters as u64 * d
        + 2 * (2 * config.lora_rank as u64 * d);
    v * d + p * d + l * per_layer + 2 * d + d * v
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `seq_len × vocab` next-token logits.
    pub logits: Array2<f64>,
    /// Per layer `heads × seq_len × (n_adapters + seq_len)` attention weights,
    /// present only when capture was requested. Columns `0..n_adapters` are
    /// the prefix slots.
    pub attention: Option<Vec<Array3<f64>>>,
}

/// Forward/generate contract for any backbone.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn max_positions(&self) -> usize;
    /// Number of prefix key/value slots visible to every query (0 if none).
    fn prefix_len(&self) -> usize {
        0
    }
    fn forward(&self, token_ids: &[u32], capture_attention: bool) -> Result<ForwardOutput>;

    /// Greedy decoding; the returned continuation excludes the EOS.
    fn generate(&self, prompt_ids: &[u32], max_new: usize, eos: u32) -> Result<Vec<u32>> {
        if prompt_ids.len() > self.max_positions() {
            return Err(Error::Overlength {
                len: prompt_ids.len(),
                max: self.max_positions(),
            });
        }
        let mut seq = prompt_ids.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && seq.len() < self.max_positions() {
            let logits = self.forward(&seq, false)?.logits;
            let next = argmax(logits.row(logits.nrows() - 1));
            if next == eos {
                break;
            }
            out.push(next);
            seq.push(next);
        }
        Ok(out)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

pub(crate) fn check_input(ids: &[u32], vocab: usize, max_positions: usize) -> Result<()> {
    if ids.len() > max_positions {
        return Err(Error::Overlength {
            len: ids.len(),
            max: max_positions,
        });
    }
    if ids.is_empty() {
        return Err(Error::invalid("empty token sequence"));
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab) {
        return Err(Error::OutOfVocab { id, vocab });
    }
    Ok(())
}
