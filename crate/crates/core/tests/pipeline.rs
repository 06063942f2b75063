use tripletqa::backbone::ParamGroup;
use tripletqa::corpus::synthetic::evidence_corpus;
use tripletqa::evaluator::EvalTasks;
use tripletqa::prompting::{build_tokenizer, TemplateSet};
use tripletqa::{evaluate, EvalOptions, ModelBundle, TrainConfig, Trainer};

fn config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.adaptation = tripletqa::AdaptationMode::Full;
    cfg.model.d_model = 16;
    cfg.model.max_positions = 128;
    cfg.data.max_len = 128;
    cfg.data.batch_size = 4;
    cfg.data.max_steps = Some(6);
    cfg.optim.lr = 3e-3;
    cfg
}

fn train_once(dir: &std::path::Path) -> (String, Vec<u8>) {
    let corpus = evidence_corpus(8, 3);
    let dev = evidence_corpus(3, 4);
    let tok = build_tokenizer(corpus.iter().chain(&dev), &TemplateSet::default());
    let trainer = Trainer::new(config(), tok, TemplateSet::default(), &corpus, &dev).unwrap();
    let mut state = trainer.init_state(None).unwrap();
    let mut log = Vec::new();
    let best = dir.join("best.ckpt");
    trainer
        .run(
            &mut state,
            &mut log,
            0,
            &mut |s| trainer.checkpoint(s).save(&best),
            &mut |_| Ok(()),
        )
        .unwrap();
    let last = dir.join("last.ckpt");
    trainer.checkpoint(&state).save(&last).unwrap();
    (String::from_utf8(log).unwrap(), std::fs::read(last).unwrap())
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (log_a, ckpt_a) = train_once(a.path());
    let (log_b, ckpt_b) = train_once(b.path());
    assert_eq!(log_a, log_b);
    assert_eq!(ckpt_a, ckpt_b);
    assert_eq!(log_a.lines().filter(|l| l.contains("\"event\":\"step\"")).count(), 6);
    assert!(a.path().join("best.ckpt").exists());
}

#[test]
fn saved_checkpoint_evaluates_like_the_live_model() {
    let dir = tempfile::tempdir().unwrap();
    train_once(dir.path());
    let bundle = ModelBundle::load(&dir.path().join("last.ckpt")).unwrap();
    let corpus = evidence_corpus(8, 3);
    let opts = EvalOptions {
        tasks: EvalTasks::all(),
        ..EvalOptions::default()
    };
    let before = bundle.model.params.digest(ParamGroup::Base);
    let (r1, p1) = evaluate(&bundle.model, &bundle.tokenizer, &bundle.prompter, &corpus, &opts).unwrap();
    let (r2, p2) = evaluate(&bundle.model, &bundle.tokenizer, &bundle.prompter, &corpus, &opts).unwrap();
    assert_eq!(before, bundle.model.params.digest(ParamGroup::Base));
    assert_eq!(r1.to_json(), r2.to_json());
    assert_eq!(p1, p2);
    assert_eq!(r1.records.len(), corpus.len());
    let mean_f1 = r1.records.iter().map(|r| r.f1.unwrap()).sum::<f64>() / corpus.len() as f64;
    assert!((r1.f1.unwrap() - mean_f1).abs() < 1e-12);
}
