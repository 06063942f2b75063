//! Pre-norm GPT-style decoder with a hand-written backward pass.
//!
//! Each block computes
//!
//! ```text
//! h  = LN₁(x)
//! q  = h·Wq + s·(h·Aq)·Bq        k = h·Wk        v = h·Wv + s·(h·Av)·Bv
//! K  = [Pk; k]   V = [Pv; v]      (prefix rows prepended)
//! x' = x + softmax(q·Kᵀ/√dₕ + causal)·V · Wo
//! y  = x' + GELU(LN₂(x')·W↑ + b↑)·W↓ + b↓
//! ```
//!
//! Prefix rows are visible from every position and never produce logits.

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, Axis, Zip};

use super::params::ModelParams;
use super::{check_input, AdaptationMode, BackboneConfig, ForwardOutput, LanguageModel, ParamGroup};
use crate::error::Result;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub config: BackboneConfig,
    pub params: ModelParams,
}

struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct LayerCache {
    norm1: NormCache,
    h: Array2<f64>,
    q: Array2<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    /// `h·Aq`, `h·Av`
    hq_a: Array2<f64>,
    hv_a: Array2<f64>,
    /// per head `T × (Np + T)`
    attn: Vec<Array2<f64>>,
    mixed: Array2<f64>,
    norm2: NormCache,
    h2: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

/// Activations retained for [`Transformer::backward`].
pub struct ForwardCache {
    token_ids: Vec<u32>,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
    final_h: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * rstd.view().insert_axis(Axis(1));
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, rstd })
}

/// Returns dx; accumulates into the gain/bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: &Array2<f64>,
    dgain: &mut Array2<f64>,
    dbias: &mut Array2<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gain;
    let d = dy.ncols() as f64;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    dx * cache.rstd.view().insert_axis(Axis(1))
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl Transformer {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: BackboneConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expect = ModelParams::zeros(&config);
        let shapes = |p: &ModelParams| {
            p.tensors()
                .iter()
                .map(|(n, _, a)| (n.clone(), a.dim()))
                .collect::<Vec<_>>()
        };
        if shapes(&expect) != shapes(&params) {
            return Err(crate::Error::InvalidConfig(
                "parameter shapes do not match config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    /// Forward pass that also returns the activations needed for backprop.
    pub fn forward_train(&self, token_ids: &[u32], capture: bool) -> Result<(ForwardOutput, ForwardCache)> {
        let cfg = &self.config;
        check_input(token_ids, cfg.vocab_size, cfg.max_positions)?;
        let p = &self.params;
        let t = token_ids.len();
        let d = cfg.d_model;
        let np = cfg.n_adapters;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let lora = cfg.lora_scale();

        let mut x = Array2::zeros((t, d));
        for (i, &id) in token_ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &p.tok_embed.row(id as usize);
            row += &p.pos_embed.row(i);
        }

        let mut caches = Vec::with_capacity(cfg.layers);
        let mut captured = capture.then(Vec::new);
        for layer in &p.layers {
            let (h, norm1) = layer_norm(&x, &layer.norm1_gain, &layer.norm1_bias);
            let hq_a = h.dot(&layer.lora_q_a);
            let hv_a = h.dot(&layer.lora_v_a);
            let mut q = h.dot(&layer.wq);
            let k = h.dot(&layer.wk);
            let mut v = h.dot(&layer.wv);
            if cfg.lora_rank > 0 {
                q.scaled_add(lora, &hq_a.dot(&layer.lora_q_b));
                v.scaled_add(lora, &hv_a.dot(&layer.lora_v_b));
            }
            let keys = concatenate![Axis(0), layer.prefix_keys, k];
            let values = concatenate![Axis(0), layer.prefix_values, v];

            let mut mixed = Array2::zeros((t, d));
            let mut attn = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut scores = q.slice(cols).dot(&keys.slice(cols).t()) * scale;
                for (row, mut r) in scores.rows_mut().into_iter().enumerate() {
                    r.slice_mut(s![np + row + 1..]).fill(f64::NEG_INFINITY);
                }
                softmax_rows_inplace(&mut scores);
                mixed.slice_mut(cols).assign(&scores.dot(&values.slice(cols)));
                attn.push(scores);
            }
            if let Some(store) = captured.as_mut() {
                let mut a = Array3::zeros((cfg.heads, t, np + t));
                for (hd, m) in attn.iter().enumerate() {
                    a.index_axis_mut(Axis(0), hd).assign(m);
                }
                store.push(a);
            }
            x = x + mixed.dot(&layer.wo);

            let (h2, norm2) = layer_norm(&x, &layer.norm2_gain, &layer.norm2_bias);
            let pre_act = h2.dot(&layer.w_up) + &layer.b_up;
            let act = pre_act.mapv(gelu);
            x = x + act.dot(&layer.w_down) + &layer.b_down;

            caches.push(LayerCache {
                norm1,
                h,
                q,
                keys,
                values,
                hq_a,
                hv_a,
                attn,
                mixed,
                norm2,
                h2,
                pre_act,
                act,
            });
        }
        let (final_h, final_norm) = layer_norm(&x, &p.final_gain, &p.final_bias);
        let logits = final_h.dot(&p.lm_head);
        Ok((
            ForwardOutput {
                logits,
                attention: captured,
            },
            ForwardCache {
                token_ids: token_ids.to_vec(),
                layers: caches,
                final_norm,
                final_h,
            },
        ))
    }

    /// Gradients of a scalar loss given `dloss/dlogits`.
    ///
    /// Weight gradients for groups `mode` does not train are left at zero;
    /// gradients still flow through those weights to earlier layers.
    pub fn backward(&self, cache: &ForwardCache, dlogits: ArrayView2<'_, f64>, mode: AdaptationMode) -> ModelParams {
        let cfg = &self.config;
        let p = &self.params;
        let mut g = p.zeros_like();
        let base = mode.trains(ParamGroup::Base);
        let adapters = mode.trains(ParamGroup::Adapter);
        let low_rank = mode.trains(ParamGroup::LowRank) && cfg.lora_rank > 0;
        let np = cfg.n_adapters;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let lora = cfg.lora_scale();
        let t = cache.token_ids.len();

        if base {
            g.lm_head = cache.final_h.t().dot(&dlogits);
        }
        let dfinal = dlogits.dot(&p.lm_head.t());
        let mut dx = layer_norm_backward(
            &dfinal,
            &cache.final_norm,
            &p.final_gain,
            &mut g.final_gain,
            &mut g.final_bias,
        );

        for (layer, (lc, lg)) in p.layers.iter().zip(cache.layers.iter().zip(g.layers.iter_mut())).rev() {
            // MLP
            if base {
                lg.b_down += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
                lg.w_down = lc.act.t().dot(&dx);
            }
            let mut dpre = dx.dot(&layer.w_down.t());
            Zip::from(&mut dpre)
                .and(&lc.pre_act)
                .for_each(|d, &u| *d *= gelu_grad(u));
            if base {
                lg.b_up += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
                lg.w_up = lc.h2.t().dot(&dpre);
            }
            let dh2 = dpre.dot(&layer.w_up.t());
            dx += &layer_norm_backward(
                &dh2,
                &lc.norm2,
                &layer.norm2_gain,
                &mut lg.norm2_gain,
                &mut lg.norm2_bias,
            );

            // attention
            if base {
                lg.wo = lc.mixed.t().dot(&dx);
            }
            let dmixed = dx.dot(&layer.wo.t());
            let mut dq = Array2::zeros((t, cfg.d_model));
            let mut dkeys = Array2::zeros((np + t, cfg.d_model));
            let mut dvalues = Array2::zeros((np + t, cfg.d_model));
            for (head, att) in lc.attn.iter().enumerate() {
                let cols = s![.., head * dh..(head + 1) * dh];
                let dout = dmixed.slice(cols);
                let datt = dout.dot(&lc.values.slice(cols).t());
                dvalues.slice_mut(cols).assign(&att.t().dot(&dout));
                let row_dot = (&datt * att).sum_axis(Axis(1));
                let dscores = (datt - &row_dot.insert_axis(Axis(1))) * att * scale;
                dq.slice_mut(cols).assign(&dscores.dot(&lc.keys.slice(cols)));
                dkeys.slice_mut(cols).assign(&dscores.t().dot(&lc.q.slice(cols)));
            }
            if adapters && np > 0 {
                lg.prefix_keys = dkeys.slice(s![..np, ..]).to_owned();
                lg.prefix_values = dvalues.slice(s![..np, ..]).to_owned();
            }
            let dk = dkeys.slice(s![np.., ..]);
            let dv = dvalues.slice(s![np.., ..]);

            let mut dh = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
            if base {
                lg.wq = lc.h.t().dot(&dq);
                lg.wk = lc.h.t().dot(&dk);
                lg.wv = lc.h.t().dot(&dv);
            }
            if cfg.lora_rank > 0 {
                let dq_b = dq.dot(&layer.lora_q_b.t()) * lora;
                let dv_b = dv.dot(&layer.lora_v_b.t()) * lora;
                if low_rank {
                    lg.lora_q_b = lc.hq_a.t().dot(&dq) * lora;
                    lg.lora_v_b = lc.hv_a.t().dot(&dv) * lora;
                    lg.lora_q_a = lc.h.t().dot(&dq_b);
                    lg.lora_v_a = lc.h.t().dot(&dv_b);
                }
                dh += &dq_b.dot(&layer.lora_q_a.t());
                dh += &dv_b.dot(&layer.lora_v_a.t());
            }
            dx += &layer_norm_backward(
                &dh,
                &lc.norm1,
                &layer.norm1_gain,
                &mut lg.norm1_gain,
                &mut lg.norm1_bias,
            );
        }

        if base {
            for (i, &id) in cache.token_ids.iter().enumerate() {
                let mut row = g.tok_embed.row_mut(id as usize);
                row += &dx.row(i);
                g.pos_embed.row_mut(i).assign(&dx.row(i));
            }
        } else {
            // norm gains were accumulated unconditionally above
            for lg in &mut g.layers {
                for a in [
                    &mut lg.norm1_gain,
                    &mut lg.norm1_bias,
                    &mut lg.norm2_gain,
                    &mut lg.norm2_bias,
                ] {
                    a.fill(0.0);
                }
            }
            g.final_gain.fill(0.0);
            g.final_bias.fill(0.0);
        }
        g
    }
}

impl LanguageModel for Transformer {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_positions(&self) -> usize {
        self.config.max_positions
    }

    fn prefix_len(&self) -> usize {
        self.config.n_adapters
    }

    fn forward(&self, token_ids: &[u32], capture_attention: bool) -> Result<ForwardOutput> {
        self.forward_train(token_ids, capture_attention).map(|(out, _)| out)
    }
}
