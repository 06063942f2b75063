//! Joint triplet training loop.
//!
//! Each step renders the answer-aware evidence, evidence-enhanced answering,
//! evidence-free answering and question restoration views of every example
//! in the batch, sums the weighted losses and takes one AdamW step on the
//! parameters selected by the adaptation mode. Batches are a pure function of
//! `(seed, step)`, so a run resumed from a checkpoint replays the uninterrupted
//! run exactly.

pub mod config;
pub mod optim;
pub mod sweep;

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backbone::{Checkpoint, LanguageModel, ModelParams, Transformer};
use crate::corpus::TripletExample;
use crate::error::{Error, Result};
use crate::objectives::{
    aligned_answer_positions, instance_nll_grad, kl_bridging_grad, sequence_nll, triplet_total, Components,
    LossBreakdown,
};
use crate::prompting::{Prompter, RenderedInstance, Task, TemplateSet, Tokenizer, WordTokenizer};

pub use config::{Ablation, DataConfig, ModelConfig, OptimConfig, TrainConfig};
pub use optim::{clip_grad_norm, grad_norm, AdamW};
pub use sweep::{sweep_configs, sweep_grid, SWEEP_VALUES};

const CHECKPOINT_KIND: &str = "tripletqa-train";

/// Everything needed to run a trained model on new inputs.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub tokenizer: WordTokenizer,
    pub prompter: Prompter,
    pub model: Transformer,
}

impl ModelBundle {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = TrainMeta::parse(ckpt)?;
        Ok(Self {
            config: meta.config,
            tokenizer: meta.tokenizer,
            prompter: meta.prompter,
            model: ckpt.to_model()?,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Running sums for the per-epoch summary line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochAccumulator {
    pub steps: usize,
    pub l_qae: f64,
    pub l_seq: f64,
    pub l_kl: f64,
    pub l_eaq: f64,
    pub l_total: f64,
}

impl EpochAccumulator {
    fn add(&mut self, b: &LossBreakdown) {
        self.steps += 1;
        self.l_qae += b.l_qae.unwrap_or(0.0);
        self.l_seq += b.l_seq;
        self.l_kl += b.l_kl.unwrap_or(0.0);
        self.l_eaq += b.l_eaq.unwrap_or(0.0);
        self.l_total += b.l_total;
    }

    fn mean(&self, template: &LossBreakdown) -> LossBreakdown {
        let n = self.steps.max(1) as f64;
        LossBreakdown {
            l_qae: template.l_qae.map(|_| self.l_qae / n),
            l_seq: self.l_seq / n,
            l_kl: template.l_kl.map(|_| self.l_kl / n),
            l_eaq: template.l_eaq.map(|_| self.l_eaq / n),
            l_total: self.l_total / n,
        }
    }
}

/// Mutable training state; everything here round-trips through a checkpoint.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Transformer,
    pub optim: AdamW,
    /// Completed optimizer steps.
    pub step: usize,
    pub epoch_acc: EpochAccumulator,
    pub best_score: Option<f64>,
    pub best_step: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainMeta {
    kind: String,
    step: usize,
    config_hash: String,
    config: TrainConfig,
    tokenizer: WordTokenizer,
    prompter: Prompter,
    optim_t: u64,
    epoch_acc: EpochAccumulator,
    best_score: Option<f64>,
    best_step: Option<usize>,
}

impl TrainMeta {
    fn parse(ckpt: &Checkpoint) -> Result<Self> {
        let meta: TrainMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("not a training checkpoint: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("unexpected checkpoint kind {:?}", meta.kind)));
        }
        Ok(meta)
    }
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: usize,
        epoch: usize,
        #[serde(flatten)]
        losses: LossBreakdown,
        instances: usize,
        grad_norm: f64,
    },
    Epoch {
        epoch: usize,
        step: usize,
        #[serde(flatten)]
        mean: LossBreakdown,
        /// Mean answering loss on the selection split (dev if given, else train).
        selection_l_seq: f64,
        best: bool,
    },
}

/// Rendered views of one example.
#[derive(Debug, Clone)]
struct Views {
    qae: Option<RenderedInstance>,
    qea: RenderedInstance,
    plain: Option<RenderedInstance>,
    eaq: Option<RenderedInstance>,
}

impl Views {
    fn count(&self) -> usize {
        1 + [self.qae.is_some(), self.plain.is_some(), self.eaq.is_some()]
            .iter()
            .filter(|&&b| b)
            .count()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Scales {
    qae: f64,
    seq: f64,
    kl: f64,
    eaq: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct ExampleLoss {
    qae: Option<f64>,
    seq: f64,
    kl: Option<f64>,
    eaq: Option<f64>,
}

/// Result of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub losses: LossBreakdown,
    pub instances: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_step: usize,
    pub best_step: Option<usize>,
    pub best_score: Option<f64>,
    pub last: Option<StepOutcome>,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub tokenizer: WordTokenizer,
    pub prompter: Prompter,
    train: &'a [TripletExample],
    dev: &'a [TripletExample],
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        tokenizer: WordTokenizer,
        templates: TemplateSet,
        train: &'a [TripletExample],
        dev: &'a [TripletExample],
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("training corpus is empty"));
        }
        let prompter = Prompter {
            templates,
            options: config.data.render_options(),
            max_len: config.data.max_len,
        };
        Ok(Self {
            config,
            tokenizer,
            prompter,
            train,
            dev,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.config.data.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.config
            .data
            .max_steps
            .unwrap_or(self.config.data.epochs * self.batches_per_epoch())
    }

    /// Example indices for 0-based `step`.
    pub fn batch_indices(&self, step: usize) -> (usize, Vec<usize>) {
        let bpe = self.batches_per_epoch();
        let epoch = step / bpe;
        let within = step % bpe;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let seed = self.config.data.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let bs = self.config.data.batch_size;
        let end = ((within + 1) * bs).min(order.len());
        (epoch, order[within * bs..end].to_vec())
    }

    /// Fresh state: a newly initialised backbone, or the weights of `init`.
    pub fn init_state(&self, init: Option<Transformer>) -> Result<TrainState> {
        let expected = self.config.model.backbone(self.tokenizer.vocab_size());
        let model = match init {
            Some(m) => {
                if m.config != expected {
                    return Err(Error::InvalidConfig(
                        "initial model does not match the configured backbone and vocabulary".into(),
                    ));
                }
                m
            }
            None => Transformer::new(expected, self.config.data.seed)?,
        };
        let optim = AdamW::new(&model.params);
        Ok(TrainState {
            model,
            optim,
            step: 0,
            epoch_acc: EpochAccumulator::default(),
            best_score: None,
            best_step: None,
        })
    }

    fn views(&self, ex: &TripletExample) -> Result<Views> {
        let w = &self.config.loss;
        let tok = &self.tokenizer;
        let p = &self.prompter;
        let evidence = ex.has_evidence();
        let (qea, plain) = if w.kl_active() {
            let (e, pl) = p.bridging_pair(ex, tok)?;
            (e, Some(pl))
        } else {
            (p.render(Task::Qea, ex, tok)?, None)
        };
        Ok(Views {
            qae: if w.use_qae && evidence {
                Some(p.render(Task::Qae, ex, tok)?)
            } else {
                None
            },
            qea,
            plain,
            eaq: if w.use_eaq && evidence {
                Some(p.render(Task::Eaq, ex, tok)?)
            } else {
                None
            },
        })
    }

    /// Batch objective and its gradient without touching the parameters.
    ///
    /// Each component is averaged over the examples that produce it; examples
    /// without evidence contribute only to the answering terms.
    pub fn objective(
        &self,
        model: &Transformer,
        batch: &[&TripletExample],
        step: usize,
    ) -> Result<(LossBreakdown, ModelParams, usize)> {
        let views: Vec<Views> = batch.iter().map(|ex| self.views(ex)).collect::<Result<_>>()?;
        let n = views.len() as f64;
        let n_qae = views.iter().filter(|v| v.qae.is_some()).count();
        let n_eaq = views.iter().filter(|v| v.eaq.is_some()).count();
        let c = self.config.loss.coefficients();
        let per = |coef: f64, count: usize| if count == 0 { 0.0 } else { coef / count as f64 };
        let scales = Scales {
            qae: per(c.qae, n_qae),
            seq: c.seq / n,
            kl: c.kl / n,
            eaq: per(c.eaq, n_eaq),
        };

        let results: Vec<Result<(ExampleLoss, ModelParams)>> = views
            .par_iter()
            .map(|v| self.example_grad(model, v, scales, step))
            .collect();

        let mut grads = model.params.zeros_like();
        let mut sums = ExampleLoss::default();
        for r in results {
            let (loss, g) = r?;
            grads.add_scaled(&g, 1.0);
            let acc = |s: &mut Option<f64>, v: Option<f64>| {
                if let Some(v) = v {
                    *s = Some(s.unwrap_or(0.0) + v);
                }
            };
            acc(&mut sums.qae, loss.qae);
            acc(&mut sums.kl, loss.kl);
            acc(&mut sums.eaq, loss.eaq);
            sums.seq += loss.seq;
        }
        let w = &self.config.loss;
        let mean = |s: Option<f64>, count: usize, enabled: bool| match s {
            Some(v) => Some(v / count as f64),
            None if enabled => Some(0.0),
            None => None,
        };
        let components = Components {
            qae: mean(sums.qae, n_qae, w.use_qae),
            seq: sums.seq / n,
            kl: mean(sums.kl, views.len(), w.kl_active()),
            eaq: mean(sums.eaq, n_eaq, w.use_eaq),
        };
        let instances = views.iter().map(Views::count).sum();
        Ok((triplet_total(&components, w)?, grads, instances))
    }

    fn example_grad(
        &self,
        model: &Transformer,
        v: &Views,
        s: Scales,
        step: usize,
    ) -> Result<(ExampleLoss, ModelParams)> {
        let mode = self.config.model.adaptation;
        let mut grads = model.params.zeros_like();
        let mut loss = ExampleLoss::default();

        let simple = |inst: &RenderedInstance, scale: f64, grads: &mut ModelParams| -> Result<f64> {
            let (out, cache) = model.forward_train(&inst.token_ids, false)?;
            let (value, g) = instance_nll_grad(out.logits.view(), inst)?;
            self.check_finite(value, step, inst)?;
            if scale != 0.0 {
                grads.add_scaled(&model.backward(&cache, (g * scale).view(), mode), 1.0);
            }
            Ok(value)
        };
        if let Some(inst) = &v.qae {
            loss.qae = Some(simple(inst, s.qae, &mut grads)?);
        }
        if let Some(inst) = &v.eaq {
            loss.eaq = Some(simple(inst, s.eaq, &mut grads)?);
        }

        let (out_e, cache_e) = model.forward_train(&v.qea.token_ids, false)?;
        let (seq, g_seq) = instance_nll_grad(out_e.logits.view(), &v.qea)?;
        self.check_finite(seq, step, &v.qea)?;
        loss.seq = seq;
        let mut d_e: Array2<f64> = g_seq * s.seq;
        if let Some(plain) = &v.plain {
            let (out_p, cache_p) = model.forward_train(&plain.token_ids, false)?;
            let aligned = aligned_answer_positions(plain, &v.qea)?;
            let (kl, gp, ge) = kl_bridging_grad(
                out_p.logits.view(),
                out_e.logits.view(),
                &aligned,
                self.config.loss.kl_direction,
            )?;
            self.check_finite(kl, step, plain)?;
            loss.kl = Some(kl);
            if s.kl != 0.0 {
                if !self.config.loss.kl_teacher_stopgrad {
                    d_e.scaled_add(s.kl, &ge);
                }
                grads.add_scaled(&model.backward(&cache_p, (gp * s.kl).view(), mode), 1.0);
            }
        }
        grads.add_scaled(&model.backward(&cache_e, d_e.view(), mode), 1.0);
        Ok((loss, grads))
    }

    fn check_finite(&self, value: f64, step: usize, inst: &RenderedInstance) -> Result<()> {
        if value.is_finite() {
            return Ok(());
        }
        Err(Error::NonFiniteLoss {
            step,
            example_id: inst.example_id.clone(),
            task: inst.task.to_string(),
            dump: inst.debug_json(&self.tokenizer).to_string(),
        })
    }

    /// One optimizer step on the batch scheduled for `state.step`.
    pub fn step(&self, state: &mut TrainState) -> Result<StepOutcome> {
        let (_, idx) = self.batch_indices(state.step);
        let batch: Vec<&TripletExample> = idx.iter().map(|&i| &self.train[i]).collect();
        self.step_on(state, &batch)
    }

    /// One optimizer step on an explicit batch.
    pub fn step_on(&self, state: &mut TrainState, batch: &[&TripletExample]) -> Result<StepOutcome> {
        let (losses, mut grads, instances) = self.objective(&state.model, batch, state.step + 1)?;
        if !losses.l_total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: state.step + 1,
                example_id: batch.first().map(|e| e.id.clone()).unwrap_or_default(),
                task: "total".into(),
                dump: serde_json::to_string(&losses).unwrap_or_default(),
            });
        }
        let mode = self.config.model.adaptation;
        let norm = clip_grad_norm(&mut grads, mode, self.config.optim.grad_clip);
        state
            .optim
            .step(&mut state.model.params, &grads, mode, &self.config.optim);
        state.step += 1;
        Ok(StepOutcome {
            losses,
            instances,
            grad_norm: norm,
        })
    }

    /// Mean evidence-enhanced answering loss over `examples`.
    pub fn answer_loss(&self, model: &Transformer, examples: &[TripletExample]) -> Result<f64> {
        let values: Vec<Result<f64>> = examples
            .par_iter()
            .map(|ex| {
                let inst = self.prompter.render(Task::Qea, ex, &self.tokenizer)?;
                let out = model.forward(&inst.token_ids, false)?;
                sequence_nll(out.logits.view(), &inst.token_ids, &inst.loss_mask)
            })
            .collect();
        let mut total = 0.0;
        for v in values {
            total += v?;
        }
        Ok(total / examples.len().max(1) as f64)
    }

    /// Runs until `total_steps`, writing one JSON line per step and per epoch.
    /// `on_best` is called whenever the selection loss improves at an epoch
    /// boundary; `on_checkpoint` after every `checkpoint_every` steps (0 = never).
    pub fn run(
        &self,
        state: &mut TrainState,
        log: &mut dyn Write,
        checkpoint_every: usize,
        on_best: &mut dyn FnMut(&TrainState) -> Result<()>,
        on_checkpoint: &mut dyn FnMut(&TrainState) -> Result<()>,
    ) -> Result<RunSummary> {
        let total = self.total_steps();
        let bpe = self.batches_per_epoch();
        let mut last = None;
        while state.step < total {
            let (epoch, _) = self.batch_indices(state.step);
            let outcome = self.step(state)?;
            state.epoch_acc.add(&outcome.losses);
            write_record(
                log,
                &LogRecord::Step {
                    step: state.step,
                    epoch,
                    losses: outcome.losses,
                    instances: outcome.instances,
                    grad_norm: outcome.grad_norm,
                },
            )?;
            if state.step % bpe == 0 || state.step == total {
                let split = if self.dev.is_empty() { self.train } else { self.dev };
                let score = self.answer_loss(&state.model, split)?;
                let best = state.best_score.is_none_or(|b| score < b);
                if best {
                    state.best_score = Some(score);
                    state.best_step = Some(state.step);
                }
                write_record(
                    log,
                    &LogRecord::Epoch {
                        epoch,
                        step: state.step,
                        mean: state.epoch_acc.mean(&outcome.losses),
                        selection_l_seq: score,
                        best,
                    },
                )?;
                state.epoch_acc = EpochAccumulator::default();
                if best {
                    on_best(state)?;
                }
            }
            if checkpoint_every > 0 && state.step % checkpoint_every == 0 {
                on_checkpoint(state)?;
            }
            last = Some(outcome);
        }
        Ok(RunSummary {
            final_step: state.step,
            best_step: state.best_step,
            best_score: state.best_score,
            last,
        })
    }

    /// Serializes model, optimizer moments and loop counters.
    pub fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        let meta = TrainMeta {
            kind: CHECKPOINT_KIND.into(),
            step: state.step,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            prompter: self.prompter.clone(),
            optim_t: state.optim.t,
            epoch_acc: state.epoch_acc.clone(),
            best_score: state.best_score,
            best_step: state.best_step,
        };
        let mut ckpt = Checkpoint::from_model(&state.model, serde_json::to_value(meta).expect("meta serializes"));
        let mode = self.config.model.adaptation;
        for (i, (name, group, _)) in state.model.params.tensors().into_iter().enumerate() {
            if mode.trains(group) {
                ckpt.arrays.push((format!("optim.m.{name}"), state.optim.m[i].clone()));
                ckpt.arrays.push((format!("optim.v.{name}"), state.optim.v[i].clone()));
            }
        }
        ckpt
    }

    /// Restores a state written by [`checkpoint`](Self::checkpoint). The
    /// checkpoint must come from a run with the same configuration.
    pub fn resume(&self, ckpt: &Checkpoint) -> Result<TrainState> {
        let meta = TrainMeta::parse(ckpt)?;
        if meta.config_hash != self.config.hash() {
            return Err(Error::Checkpoint(format!(
                "config hash {} does not match checkpoint {}",
                self.config.hash(),
                meta.config_hash
            )));
        }
        if meta.tokenizer != self.tokenizer {
            return Err(Error::Checkpoint("tokenizer differs from checkpoint".into()));
        }
        let model = ckpt.to_model()?;
        let mut optim = AdamW::new(&model.params);
        optim.t = meta.optim_t;
        let mode = self.config.model.adaptation;
        for (i, (name, group, _)) in model.params.tensors().into_iter().enumerate() {
            if !mode.trains(group) {
                continue;
            }
            for (prefix, slot) in [("optim.m.", &mut optim.m[i]), ("optim.v.", &mut optim.v[i])] {
                let a = ckpt
                    .array(&format!("{prefix}{name}"))
                    .filter(|a| a.dim() == slot.dim())
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))?;
                slot.assign(a);
            }
        }
        Ok(TrainState {
            model,
            optim,
            step: meta.step,
            epoch_acc: meta.epoch_acc,
            best_score: meta.best_score,
            best_step: meta.best_step,
        })
    }

    /// Inference bundle for the current state.
    pub fn bundle(&self, state: &TrainState) -> ModelBundle {
        ModelBundle {
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            prompter: self.prompter.clone(),
            model: state.model.clone(),
        }
    }
}

fn write_record(log: &mut dyn Write, record: &LogRecord) -> Result<()> {
    let line = serde_json::to_string(record)?;
    writeln!(log, "{line}").map_err(|e| Error::io("<training log>", e))
}

/// Static metadata describing a checkpoint, for manifests.
pub fn checkpoint_summary(ckpt: &Checkpoint) -> serde_json::Value {
    match TrainMeta::parse(ckpt) {
        Ok(m) => json!({"step": m.step, "config_hash": m.config_hash}),
        Err(_) => json!({}),
    }
}

#[cfg(test)]
mod tests;
