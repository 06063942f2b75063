use super::*;
use crate::backbone::{AdaptationMode, ParamGroup};
use crate::corpus::synthetic::evidence_corpus;
use crate::prompting::build_tokenizer;

fn tiny_config(mode: AdaptationMode) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.model = ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        max_positions: 160,
        n_adapters: 2,
        lora_rank: 2,
        lora_alpha: 4.0,
        adaptation: mode,
    };
    c.data.max_len = 160;
    c.data.batch_size = 3;
    c.optim.lr = 1e-2;
    c
}

fn setup(n: usize) -> (Vec<TripletExample>, WordTokenizer) {
    let corpus = evidence_corpus(n, 11);
    let tok = build_tokenizer(&corpus, &TemplateSet::default());
    (corpus, tok)
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let (corpus, tok) = setup(2);
    let mut cfg = tiny_config(AdaptationMode::Full);
    cfg.loss.alpha_kl = 0.7;
    let trainer = Trainer::new(cfg, tok, TemplateSet::default(), &corpus, &[]).unwrap();
    let state = trainer.init_state(None).unwrap();
    let batch: Vec<&TripletExample> = corpus.iter().collect();
    let (_, grads, instances) = trainer.objective(&state.model, &batch, 1).unwrap();
    assert_eq!(instances, 8);

    let grad_tensors = grads.tensors();
    let h = 1e-5;
    let mut checked = 0;
    for (ti, (name, _, g)) in grad_tensors.iter().enumerate() {
        // a few entries per tensor with the largest gradients
        let mut idx: Vec<usize> = (0..g.len()).collect();
        idx.sort_by(|&a, &b| {
            g.iter()
                .nth(b)
                .unwrap()
                .abs()
                .total_cmp(&g.iter().nth(a).unwrap().abs())
        });
        for &k in idx.iter().take(2) {
            let analytic = *g.iter().nth(k).unwrap();
            let eval = |delta: f64| {
                let mut m = state.model.clone();
                m.params.for_each_mut(|i, _, a| {
                    if i == ti {
                        *a.iter_mut().nth(k).unwrap() += delta;
                    }
                });
                trainer.objective(&m, &batch, 1).unwrap().0.l_total
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4 || (analytic - numeric).abs() < 1e-8,
                "{name}[{k}]: analytic {analytic} numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn teacher_stopgrad_changes_gradient_not_loss() {
    let (corpus, tok) = setup(2);
    let batch: Vec<&TripletExample> = corpus.iter().collect();
    let run = |stop: bool| {
        let mut cfg = tiny_config(AdaptationMode::Full);
        cfg.loss.kl_teacher_stopgrad = stop;
        let t = Trainer::new(cfg, tok.clone(), TemplateSet::default(), &corpus, &[]).unwrap();
        let s = t.init_state(None).unwrap();
        let (l, g, _) = t.objective(&s.model, &batch, 1).unwrap();
        (l, g)
    };
    let (l1, g1) = run(false);
    let (l2, g2) = run(true);
    assert_eq!(l1, l2);
    assert_ne!(g1, g2);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (corpus, tok) = setup(3);
    let mut cfg = tiny_config(AdaptationMode::Full);
    cfg.optim.lr = 0.0;
    let trainer = Trainer::new(cfg, tok, TemplateSet::default(), &corpus, &[]).unwrap();
    let mut state = trainer.init_state(None).unwrap();
    let before = state.model.params.clone();
    let out = trainer.step(&mut state).unwrap();
    assert!(out.losses.l_total.is_finite() && out.losses.l_total > 0.0);
    assert_eq!(state.model.params, before);
}

#[test]
fn two_steps_on_one_example_lower_the_loss() {
    for mode in [AdaptationMode::Adapters, AdaptationMode::Lora, AdaptationMode::Full] {
        let (corpus, tok) = setup(1);
        let mut cfg = tiny_config(mode);
        cfg.data.batch_size = 1;
        let trainer = Trainer::new(cfg, tok, TemplateSet::default(), &corpus, &[]).unwrap();
        let mut state = trainer.init_state(None).unwrap();
        let batch: Vec<&TripletExample> = corpus.iter().collect();
        let loss = |s: &TrainState| trainer.objective(&s.model, &batch, 0).unwrap().0.l_total;
        let start = loss(&state);
        trainer.step_on(&mut state, &batch).unwrap();
        trainer.step_on(&mut state, &batch).unwrap();
        assert!(loss(&state) < start, "{mode:?}: {} !< {start}", loss(&state));
    }
}

#[test]
fn adapter_training_freezes_backbone() {
    let (corpus, tok) = setup(4);
    let trainer = Trainer::new(
        tiny_config(AdaptationMode::Adapters),
        tok,
        TemplateSet::default(),
        &corpus,
        &[],
    )
    .unwrap();
    let mut state = trainer.init_state(None).unwrap();
    let base = state.model.params.digest(ParamGroup::Base);
    let adapters = state.model.params.digest(ParamGroup::Adapter);
    for _ in 0..3 {
        trainer.step(&mut state).unwrap();
    }
    assert_eq!(state.model.params.digest(ParamGroup::Base), base);
    assert_ne!(state.model.params.digest(ParamGroup::Adapter), adapters);
}

#[test]
fn batches_partition_each_epoch() {
    let (corpus, tok) = setup(7);
    let trainer = Trainer::new(
        tiny_config(AdaptationMode::Full),
        tok,
        TemplateSet::default(),
        &corpus,
        &[],
    )
    .unwrap();
    assert_eq!(trainer.batches_per_epoch(), 3);
    assert_eq!(trainer.total_steps(), 9);
    let mut epoch0: Vec<usize> = (0..3).flat_map(|s| trainer.batch_indices(s).1).collect();
    epoch0.sort();
    assert_eq!(epoch0, (0..7).collect::<Vec<_>>());
    assert_eq!(trainer.batch_indices(3).0, 1);
    assert_ne!(trainer.batch_indices(0).1, trainer.batch_indices(3).1);
}

fn run_log(trainer: &Trainer<'_>, state: &mut TrainState) -> String {
    let mut log = Vec::new();
    trainer
        .run(state, &mut log, 0, &mut |_| Ok(()), &mut |_| Ok(()))
        .unwrap();
    String::from_utf8(log).unwrap()
}

#[test]
fn resume_replays_uninterrupted_run() {
    let (corpus, tok) = setup(5);
    let dev = evidence_corpus(2, 99);
    let mut cfg = tiny_config(AdaptationMode::Lora);
    cfg.data.max_steps = Some(5);
    let trainer = Trainer::new(cfg, tok, TemplateSet::default(), &corpus, &dev).unwrap();
    let mut straight = trainer.init_state(None).unwrap();
    let mut saved = Vec::new();
    let mut log = Vec::new();
    trainer
        .run(&mut straight, &mut log, 3, &mut |_| Ok(()), &mut |s| {
            if s.step == 3 {
                trainer.checkpoint(s).write_to(&mut saved)?;
            }
            Ok(())
        })
        .unwrap();
    let straight_log = String::from_utf8(log).unwrap();

    let ckpt = Checkpoint::read_from(saved.as_slice()).unwrap();
    let mut resumed = trainer.resume(&ckpt).unwrap();
    assert_eq!(resumed.step, 3);
    let tail_log = run_log(&trainer, &mut resumed);

    assert_eq!(resumed.model.params, straight.model.params);
    assert_eq!(resumed.optim, straight.optim);
    let straight_lines: Vec<&str> = straight_log.lines().collect();
    let tail_lines: Vec<&str> = tail_log.lines().collect();
    assert!(!tail_lines.is_empty());
    assert!(straight_lines.ends_with(&tail_lines), "{straight_log}\n---\n{tail_log}");
}

#[test]
fn resume_rejects_other_configs() {
    let (corpus, tok) = setup(3);
    let a = Trainer::new(
        tiny_config(AdaptationMode::Full),
        tok.clone(),
        TemplateSet::default(),
        &corpus,
        &[],
    )
    .unwrap();
    let state = a.init_state(None).unwrap();
    let ckpt = a.checkpoint(&state);
    let mut cfg = tiny_config(AdaptationMode::Full);
    cfg.loss.alpha_eaq = 0.5;
    let b = Trainer::new(cfg, tok, TemplateSet::default(), &corpus, &[]).unwrap();
    assert!(matches!(b.resume(&ckpt), Err(Error::Checkpoint(_))));
    let bundle = ModelBundle::from_checkpoint(&ckpt).unwrap();
    assert_eq!(bundle.model.params, state.model.params);
}

#[test]
fn log_omits_disabled_components() {
    let (corpus, tok) = setup(3);
    let cfg = tiny_config(AdaptationMode::Full).with_ablation(Ablation::NoQuestionRestoration);
    let mut cfg = cfg;
    cfg.data.max_steps = Some(1);
    let trainer = Trainer::new(cfg, tok, TemplateSet::default(), &corpus, &[]).unwrap();
    let mut state = trainer.init_state(None).unwrap();
    let log = run_log(&trainer, &mut state);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["event"], "step");
    assert_eq!(first["instances"], 9);
    assert!(first.get("l_eaq").is_none());
    for key in ["l_qae", "l_seq", "l_kl", "l_total"] {
        assert!(first[key].is_f64(), "{key}");
    }
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let (corpus, tok) = setup(3);
    let trainer = Trainer::new(
        tiny_config(AdaptationMode::Full),
        tok,
        TemplateSet::default(),
        &corpus,
        &[],
    )
    .unwrap();
    let mut state = trainer.init_state(None).unwrap();
    state.model.params.lm_head[[0, 0]] = f64::NAN;
    match trainer.step(&mut state) {
        Err(Error::NonFiniteLoss { step, dump, .. }) => {
            assert_eq!(step, 1);
            assert!(dump.contains("token_ids") || dump.contains("tokens"), "{dump}");
        }
        other => panic!("expected non-finite loss, got {other:?}"),
    }
    assert_eq!(state.step, 0);
}
