use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tripletqa::evaluator::metrics::{exact_match, token_f1};
use tripletqa::prompting::TemplateSet;
use tripletqa::{AdaptationMode, Task, Tokenizer, Trainer, TripletExample};
use tripletqa_bench::fixture;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for d in [32, 64] {
        let fx = fixture(4, d, AdaptationMode::Adapters);
        let trainer = Trainer::new(
            fx.config.clone(),
            fx.tokenizer.clone(),
            TemplateSet::default(),
            &fx.corpus,
            &[],
        )
        .unwrap();
        let state = trainer.init_state(None).unwrap();
        let inst = trainer
            .prompter
            .render(Task::Qea, &fx.corpus[0], &fx.tokenizer)
            .unwrap();
        group.bench_with_input(BenchmarkId::new("qea", d), &inst.token_ids, |b, ids| {
            b.iter(|| state.model.forward_train(black_box(ids), false).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for mode in [AdaptationMode::Adapters, AdaptationMode::Lora, AdaptationMode::Full] {
        let fx = fixture(8, 32, mode);
        let trainer = Trainer::new(
            fx.config.clone(),
            fx.tokenizer.clone(),
            TemplateSet::default(),
            &fx.corpus,
            &[],
        )
        .unwrap();
        let batch: Vec<&TripletExample> = fx.corpus.iter().collect();
        group.bench_function(BenchmarkId::new("batch8_d32", format!("{mode:?}")), |b| {
            let mut state = trainer.init_state(None).unwrap();
            b.iter(|| trainer.step_on(&mut state, black_box(&batch)).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let fx = fixture(64, 8, AdaptationMode::Adapters);
    let pairs: Vec<(String, String)> = fx
        .corpus
        .iter()
        .map(|ex| (ex.evidence_text(), ex.document.sentences().join(" ")))
        .collect();
    c.bench_function("metrics/f1_em_64", |b| {
        b.iter(|| {
            pairs
                .iter()
                .map(|(p, r)| token_f1(black_box(p), &[r]).unwrap() + f64::from(exact_match(p, &[r]).unwrap()))
                .sum::<f64>()
        })
    });
    let text = pairs.iter().map(|(_, r)| r.as_str()).collect::<Vec<_>>().join(" ");
    c.bench_function("tokenizer/encode_64_docs", |b| {
        b.iter(|| fx.tokenizer.encode(black_box(&text)))
    });
}

criterion_group!(benches, forward, train_step, metrics);
criterion_main!(benches);
