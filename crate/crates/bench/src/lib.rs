//! Shared fixtures for the benchmarks.

use tripletqa::corpus::synthetic::evidence_corpus;
use tripletqa::prompting::{build_tokenizer, TemplateSet};
use tripletqa::{AdaptationMode, TrainConfig, TripletExample, WordTokenizer};

pub struct Fixture {
    pub corpus: Vec<TripletExample>,
    pub tokenizer: WordTokenizer,
    pub config: TrainConfig,
}

/// Synthetic corpus and a toy training config of width `d_model`.
pub fn fixture(examples: usize, d_model: usize, mode: AdaptationMode) -> Fixture {
    let corpus = evidence_corpus(examples, 7);
    let tokenizer = build_tokenizer(&corpus, &TemplateSet::default());
    let mut config = TrainConfig::default();
    config.model.adaptation = mode;
    config.model.d_model = d_model;
    config.model.max_positions = 128;
    config.data.max_len = 128;
    config.optim.lr = 3e-3;
    Fixture {
        corpus,
        tokenizer,
        config,
    }
}
