use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{AdaptationMode, BackboneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Pretrained weights; frozen outside full fine-tuning.
    Base,
    /// Key/value prefix vectors.
    Adapter,
    /// Low-rank update factors.
    LowRank,
}

/// Weights of one transformer block. Vectors are stored as `1 × n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub norm1_gain: Array2<f64>,
    pub norm1_bias: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub norm2_gain: Array2<f64>,
    pub norm2_bias: Array2<f64>,
    pub w_up: Array2<f64>,
    pub b_up: Array2<f64>,
    pub w_down: Array2<f64>,
    pub b_down: Array2<f64>,
    /// `n_adapters × d`
    pub prefix_keys: Array2<f64>,
    /// `n_adapters × d`
    pub prefix_values: Array2<f64>,
    /// `d × r`, `r × d`
    pub lora_q_a: Array2<f64>,
    pub lora_q_b: Array2<f64>,
    pub lora_v_a: Array2<f64>,
    pub lora_v_b: Array2<f64>,
}

macro_rules! layer_fields {
    ($self:ident, $($ref:tt)+) => {
        [
            ("norm1.gain", ParamGroup::Base, $($ref)+ $self.norm1_gain),
            ("norm1.bias", ParamGroup::Base, $($ref)+ $self.norm1_bias),
            ("attn.wq", ParamGroup::Base, $($ref)+ $self.wq),
            ("attn.wk", ParamGroup::Base, $($ref)+ $self.wk),
            ("attn.wv", ParamGroup::Base, $($ref)+ $self.wv),
            ("attn.wo", ParamGroup::Base, $($ref)+ $self.wo),
            ("norm2.gain", ParamGroup::Base, $($ref)+ $self.norm2_gain),
            ("norm2.bias", ParamGroup::Base, $($ref)+ $self.norm2_bias),
            ("mlp.w_up", ParamGroup::Base, $($ref)+ $self.w_up),
            ("mlp.b_up", ParamGroup::Base, $($ref)+ $self.b_up),
            ("mlp.w_down", ParamGroup::Base, $($ref)+ $self.w_down),
            ("mlp.b_down", ParamGroup::Base, $($ref)+ $self.b_down),
            ("adapter.keys", ParamGroup::Adapter, $($ref)+ $self.prefix_keys),
            ("adapter.values", ParamGroup::Adapter, $($ref)+ $self.prefix_values),
            ("lora.q_a", ParamGroup::LowRank, $($ref)+ $self.lora_q_a),
            ("lora.q_b", ParamGroup::LowRank, $($ref)+ $self.lora_q_b),
            ("lora.v_a", ParamGroup::LowRank, $($ref)+ $self.lora_v_a),
            ("lora.v_b", ParamGroup::LowRank, $($ref)+ $self.lora_v_b),
        ]
    };
}

impl LayerParams {
    fn zeros(cfg: &BackboneConfig) -> Self {
        let d = cfg.d_model;
        let m = cfg.mlp_dim();
        let r = cfg.lora_rank;
        let np = cfg.n_adapters;
        Self {
            norm1_gain: Array2::ones((1, d)),
            norm1_bias: Array2::zeros((1, d)),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            norm2_gain: Array2::ones((1, d)),
            norm2_bias: Array2::zeros((1, d)),
            w_up: Array2::zeros((d, m)),
            b_up: Array2::zeros((1, m)),
            w_down: Array2::zeros((m, d)),
            b_down: Array2::zeros((1, d)),
            prefix_keys: Array2::zeros((np, d)),
            prefix_values: Array2::zeros((np, d)),
            lora_q_a: Array2::zeros((d, r)),
            lora_q_b: Array2::zeros((r, d)),
            lora_v_a: Array2::zeros((d, r)),
            lora_v_b: Array2::zeros((r, d)),
        }
    }

    pub fn fields(&self) -> [(&'static str, ParamGroup, &Array2<f64>); 18] {
        layer_fields!(self, &)
    }

    pub fn fields_mut(&mut self) -> [(&'static str, ParamGroup, &mut Array2<f64>); 18] {
        layer_fields!(self, &mut)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `vocab × d`
    pub tok_embed: Array2<f64>,
    /// `max_positions × d`
    pub pos_embed: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gain: Array2<f64>,
    pub final_bias: Array2<f64>,
    /// `d × vocab`
    pub lm_head: Array2<f64>,
}

impl ModelParams {
    /// Shapes for `cfg`, layer norms at identity, everything else zero.
    pub fn zeros(cfg: &BackboneConfig) -> Self {
        let d = cfg.d_model;
        Self {
            tok_embed: Array2::zeros((cfg.vocab_size, d)),
            pos_embed: Array2::zeros((cfg.max_positions, d)),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(cfg)).collect(),
            final_gain: Array2::ones((1, d)),
            final_bias: Array2::zeros((1, d)),
            lm_head: Array2::zeros((d, cfg.vocab_size)),
        }
    }

    /// Gaussian initialisation (σ = 0.02, residual projections scaled by
    /// 1/√(2L)). Low-rank `b` factors start at zero so the update is a no-op.
    pub fn init(cfg: &BackboneConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let residual = 1.0 / (2.0 * cfg.layers as f64).sqrt();
        let mut p = Self::zeros(cfg);
        let mut fill = |a: &mut Array2<f64>, scale: f64| {
            a.mapv_inplace(|_| normal.sample(&mut rng) * scale);
        };
        fill(&mut p.tok_embed, 1.0);
        fill(&mut p.pos_embed, 1.0);
        for layer in &mut p.layers {
            fill(&mut layer.wq, 1.0);
            fill(&mut layer.wk, 1.0);
            fill(&mut layer.wv, 1.0);
            fill(&mut layer.wo, residual);
            fill(&mut layer.w_up, 1.0);
            fill(&mut layer.w_down, residual);
            fill(&mut layer.prefix_keys, 1.0);
            fill(&mut layer.prefix_values, 1.0);
            fill(&mut layer.lora_q_a, 1.0);
            fill(&mut layer.lora_v_a, 1.0);
        }
        fill(&mut p.lm_head, 1.0);
        p
    }

    /// Same shapes, all zeros (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, _, a| a.fill(0.0));
        z
    }

    pub fn tensors(&self) -> Vec<(String, ParamGroup, &Array2<f64>)> {
        let mut out = vec![
            ("tok_embed".to_string(), ParamGroup::Base, &self.tok_embed),
            ("pos_embed".to_string(), ParamGroup::Base, &self.pos_embed),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, group, a) in layer.fields() {
                out.push((format!("layers.{i}.{name}"), group, a));
            }
        }
        out.push(("final.gain".to_string(), ParamGroup::Base, &self.final_gain));
        out.push(("final.bias".to_string(), ParamGroup::Base, &self.final_bias));
        out.push(("lm_head".to_string(), ParamGroup::Base, &self.lm_head));
        out
    }

    /// Visits every tensor mutably, in the same order as [`tensors`](Self::tensors).
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, ParamGroup, &mut Array2<f64>)) {
        let mut idx = 0;
        let mut visit = |g, a: &mut Array2<f64>| {
            f(idx, g, a);
            idx += 1;
        };
        visit(ParamGroup::Base, &mut self.tok_embed);
        visit(ParamGroup::Base, &mut self.pos_embed);
        for layer in &mut self.layers {
            for (_, g, a) in layer.fields_mut() {
                visit(g, a);
            }
        }
        visit(ParamGroup::Base, &mut self.final_gain);
        visit(ParamGroup::Base, &mut self.final_bias);
        visit(ParamGroup::Base, &mut self.lm_head);
    }

    pub fn count(&self, filter: impl Fn(ParamGroup) -> bool) -> u64 {
        self.tensors()
            .iter()
            .filter(|(_, g, _)| filter(*g))
            .map(|(_, _, a)| a.len() as u64)
            .sum()
    }

    pub fn count_trainable(&self, mode: AdaptationMode) -> u64 {
        self.count(|g| mode.trains(g))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let others: Vec<&Array2<f64>> = other.tensors().into_iter().map(|(_, _, a)| a).collect();
        self.for_each_mut(|i, _, a| a.scaled_add(scale, others[i]));
    }

    /// SHA-256 over the parameters in `group`, for freeze checks.
    pub fn digest(&self, group: ParamGroup) -> String {
        let mut h = Sha256::new();
        for (name, g, a) in self.tensors() {
            if g == group {
                h.update(name.as_bytes());
                for v in a.iter() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{count_trainable, total_params};

    fn cfg() -> BackboneConfig {
        BackboneConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            vocab_size: 11,
            max_positions: 16,
            n_adapters: 3,
            lora_rank: 2,
            lora_alpha: 4.0,
        }
    }

    #[test]
    fn instantiated_counts_match_closed_form() {
        let c = cfg();
        let p = ModelParams::init(&c, 0);
        for mode in [AdaptationMode::Adapters, AdaptationMode::Lora, AdaptationMode::Full] {
            assert_eq!(p.count_trainable(mode), count_trainable(&c, mode), "{mode:?}");
        }
        assert_eq!(p.count(|_| true), total_params(&c));
    }

    #[test]
    fn tensor_order_is_stable_between_views() {
        let mut p = ModelParams::init(&cfg(), 1);
        let shapes: Vec<_> = p.tensors().iter().map(|(_, _, a)| a.dim()).collect();
        let mut seen = Vec::new();
        p.for_each_mut(|i, _, a| seen.push((i, a.dim())));
        assert_eq!(seen.iter().map(|x| x.1).collect::<Vec<_>>(), shapes);
    }

    #[test]
    fn init_is_seeded_and_lora_update_starts_at_zero() {
        let a = ModelParams::init(&cfg(), 7);
        assert_eq!(a, ModelParams::init(&cfg(), 7));
        assert_ne!(a, ModelParams::init(&cfg(), 8));
        assert!(a.layers[0].lora_q_b.iter().all(|&v| v == 0.0));
        assert!(a.layers[0].lora_q_a.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn digest_tracks_only_its_group() {
        let mut p = ModelParams::init(&cfg(), 0);
        let base = p.digest(ParamGroup::Base);
        p.layers[1].prefix_keys[[0, 0]] += 1.0;
        assert_eq!(p.digest(ParamGroup::Base), base);
        p.layers[1].wq[[0, 0]] += 1.0;
        assert_ne!(p.digest(ParamGroup::Base), base);
    }
}
