use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{AdaptationMode, BackboneConfig};
use crate::error::{Error, Result};
use crate::objectives::LossWeights;
use crate::prompting::{AnswerTarget, RenderOptions};

/// Full training configuration. Serialized as TOML with `[loss]`, `[optim]`,
/// `[model]` and `[data]` tables; every key is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub max_positions: usize,
    pub n_adapters: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub adaptation: AdaptationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let b = BackboneConfig::default();
        Self {
            layers: b.layers,
            heads: b.heads,
            d_model: b.d_model,
            max_positions: b.max_positions,
            n_adapters: b.n_adapters,
            lora_rank: 8,
            lora_alpha: b.lora_alpha,
            adaptation: AdaptationMode::Adapters,
        }
    }
}

impl ModelConfig {
    /// Prefix slots exist only in adapter mode and low-rank factors only in
    /// low-rank mode, so the other modes run the plain backbone.
    pub fn backbone(&self, vocab_size: usize) -> BackboneConfig {
        let adapters = self.adaptation == AdaptationMode::Adapters;
        let lora = self.adaptation == AdaptationMode::Lora;
        BackboneConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            vocab_size,
            max_positions: self.max_positions,
            n_adapters: if adapters { self.n_adapters } else { 0 },
            lora_rank: if lora { self.lora_rank } else { 0 },
            lora_alpha: self.lora_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub max_len: usize,
    pub eaq_include_document: bool,
    pub answer_target: AnswerTarget,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 3,
            max_steps: None,
            seed: 0,
            max_len: 512,
            eaq_include_document: false,
            answer_target: AnswerTarget::Joined,
        }
    }
}

impl DataConfig {
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            eaq_include_document: self.eaq_include_document,
            omit_document: false,
            answer_target: self.answer_target,
        }
    }
}

/// Named loss ablations, each switching off one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoQuestionRestoration,
    NoEvidenceGeneration,
    NoKl,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoQuestionRestoration,
        Ablation::NoEvidenceGeneration,
        Ablation::NoKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoQuestionRestoration => "no-question-restoration",
            Ablation::NoEvidenceGeneration => "no-evidence-generation",
            Ablation::NoKl => "no-kl",
        }
    }

    pub fn apply(self, loss: &mut LossWeights) {
        match self {
            Ablation::Full => {}
            Ablation::NoQuestionRestoration => loss.use_eaq = false,
            Ablation::NoEvidenceGeneration => loss.use_qae = false,
            Ablation::NoKl => loss.use_kl = false,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation {s:?}")))
    }
}

impl TrainConfig {
    /// Small, fast defaults for the bundled toy backbone.
    pub fn toy() -> Self {
        Self::default()
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        ablation.apply(&mut self.loss);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let o = &self.optim;
        if !(o.lr.is_finite() && o.lr >= 0.0) {
            return Err(Error::InvalidConfig("lr must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            return Err(Error::InvalidConfig("invalid adaptive-moment parameters".into()));
        }
        if o.weight_decay < 0.0 || o.grad_clip < 0.0 {
            return Err(Error::InvalidConfig(
                "weight_decay and grad_clip must be non-negative".into(),
            ));
        }
        if self.data.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.data.max_len > self.model.max_positions {
            return Err(Error::InvalidConfig("max_len exceeds model max_positions".into()));
        }
        match self.model.adaptation {
            AdaptationMode::Adapters if self.model.n_adapters == 0 => {
                return Err(Error::InvalidConfig("adapter mode needs n_adapters > 0".into()))
            }
            AdaptationMode::Lora if self.model.lora_rank == 0 => {
                return Err(Error::InvalidConfig("low-rank mode needs lora_rank > 0".into()))
            }
            _ => {}
        }
        self.model.backbone(4).validate()
    }

    pub fn from_toml(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&raw)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stable hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.loss.alpha_qae, c.loss.alpha_qea, c.loss.alpha_eaq), (0.3, 1.0, 0.3));
        assert_eq!(c.optim.lr, 3e-5);
        assert_eq!(c.optim.weight_decay, 0.01);
        assert_eq!(c.optim.grad_clip, 1.0);
        assert_eq!((c.data.batch_size, c.data.epochs), (8, 3));
        assert!(!c.data.eaq_include_document);
        assert!(!c.loss.kl_teacher_stopgrad);
        assert_eq!(
            (c.model.layers, c.model.heads, c.model.d_model, c.model.max_positions),
            (2, 2, 64, 512)
        );
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = TrainConfig::from_toml("[optim]\nlr = 0.01\n[loss]\nuse_kl = false\n").unwrap();
        assert_eq!(partial.optim.lr, 0.01);
        assert!(!partial.loss.use_kl);
        assert_eq!(partial.data, DataConfig::default());
        assert!(TrainConfig::from_toml("[optim]\nlearning_rate = 1").is_err());
    }

    #[test]
    fn ablations_have_distinct_hashes() {
        let hashes: std::collections::HashSet<String> = Ablation::ALL
            .iter()
            .map(|&a| TrainConfig::default().with_ablation(a).hash())
            .collect();
        assert_eq!(hashes.len(), 4);
        assert_eq!(TrainConfig::default().hash(), TrainConfig::default().hash());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = TrainConfig::default();
        c.optim.lr = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.data.max_len = 1024;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.loss.alpha_kl = -0.5;
        assert!(c.validate().is_err());
    }
}
