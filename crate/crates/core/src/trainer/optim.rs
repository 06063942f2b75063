use ndarray::Array2;

use super::config::OptimConfig;
use crate::backbone::{AdaptationMode, ModelParams};

/// AdamW with decoupled weight decay, applied only to tensors the
/// adaptation mode trains.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .tensors()
            .into_iter()
            .map(|(_, _, a)| Array2::zeros(a.dim()))
            .collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, mode: AdaptationMode, cfg: &OptimConfig) {
        self.t += 1;
        let grads: Vec<&Array2<f64>> = grads.tensors().into_iter().map(|(_, _, a)| a).collect();
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        params.for_each_mut(|i, group, p| {
            if !mode.trains(group) {
                return;
            }
            let g = grads[i];
            ndarray::Zip::from(p)
                .and(&mut m[i])
                .and(&mut v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
                    *p -= cfg.lr * (update + cfg.weight_decay * *p);
                });
        });
    }
}

/// Global L2 norm over the tensors trained in `mode`.
pub fn grad_norm(grads: &ModelParams, mode: AdaptationMode) -> f64 {
    grads
        .tensors()
        .iter()
        .filter(|(_, g, _)| mode.trains(*g))
        .map(|(_, _, a)| a.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, mode: AdaptationMode, max_norm: f64) -> f64 {
    let norm = grad_norm(grads, mode);
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        grads.for_each_mut(|_, _, a| *a *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneConfig, ParamGroup};

    fn tiny() -> ModelParams {
        let cfg = BackboneConfig {
            layers: 1,
            heads: 1,
            d_model: 4,
            vocab_size: 5,
            max_positions: 8,
            n_adapters: 2,
            lora_rank: 2,
            lora_alpha: 2.0,
        };
        ModelParams::init(&cfg, 3)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = tiny();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.for_each_mut(|_, _, a| a.fill(-0.5));
        let cfg = OptimConfig {
            weight_decay: 0.0,
            eps: 0.0,
            lr: 0.1,
            ..OptimConfig::default()
        };
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &g, AdaptationMode::Full, &cfg);
        let diff = (&p.lm_head - &before.lm_head).mapv(|x| (x - 0.1).abs());
        assert!(diff.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn frozen_groups_and_zero_lr_leave_params_unchanged() {
        let mut p = tiny();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.for_each_mut(|_, _, a| a.fill(1.0));
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &g, AdaptationMode::Adapters, &OptimConfig::default());
        assert_eq!(p.digest(ParamGroup::Base), before.digest(ParamGroup::Base));
        assert_eq!(p.digest(ParamGroup::LowRank), before.digest(ParamGroup::LowRank));
        assert_ne!(p.digest(ParamGroup::Adapter), before.digest(ParamGroup::Adapter));

        let mut q = before.clone();
        let zero = OptimConfig {
            lr: 0.0,
            ..OptimConfig::default()
        };
        AdamW::new(&q).step(&mut q, &g, AdaptationMode::Full, &zero);
        assert_eq!(q, before);
    }

    #[test]
    fn clipping_bounds_the_trainable_norm() {
        let p = tiny();
        let mut g = p.zeros_like();
        g.for_each_mut(|_, _, a| a.fill(1.0));
        let n = g.count(|_| true) as f64;
        let norm = clip_grad_norm(&mut g, AdaptationMode::Full, 1.0);
        assert!((norm - n.sqrt()).abs() < 1e-9);
        assert!((grad_norm(&g, AdaptationMode::Full) - 1.0).abs() < 1e-12);
    }
}
