//! Evidence-annotated QA corpora and their canonical line-delimited form.
//!
//! Native MultiRC and QASPER files are converted into [`TripletExample`]
//! records; everything downstream reads the canonical JSONL file written by
//! [`canonical::write_jsonl`].

pub mod canonical;
pub mod multirc;
pub mod qasper;
pub mod stats;
pub mod synthetic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use canonical::{read_jsonl, write_jsonl, CanonicalRecord};
pub use multirc::{load_multirc, MultiRcOptions};
pub use qasper::load_qasper;
pub use stats::{compute_stats, quartile_partition, CorpusStats, Summary};

/// A document as an ordered list of sentences. Positions are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    sentences: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, sentences: Vec<String>) -> Result<Self> {
        let id = id.into();
        if sentences.is_empty() {
            return Err(Error::MalformedRecord {
                id,
                reason: "document has no sentences".into(),
            });
        }
        let sentences: Vec<String> = sentences.into_iter().map(|s| s.trim().to_string()).collect();
        if let Some(pos) = sentences.iter().position(|s| s.is_empty()) {
            return Err(Error::MalformedRecord {
                id,
                reason: format!("sentence {} is empty", pos + 1),
            });
        }
        Ok(Self { id, sentences })
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentence at 1-based position `pos`.
    pub fn sentence(&self, pos: usize) -> Option<&str> {
        pos.checked_sub(1)
            .and_then(|i| self.sentences.get(i))
            .map(String::as_str)
    }

    /// Whitespace token count over all sentences.
    pub fn token_len(&self) -> usize {
        self.sentences.iter().map(|s| s.split_whitespace().count()).sum()
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Extractive,
    Abstractive,
    YesNo,
    Unanswerable,
}

impl AnswerType {
    pub const ALL: [AnswerType; 4] = [
        AnswerType::Extractive,
        AnswerType::Abstractive,
        AnswerType::YesNo,
        AnswerType::Unanswerable,
    ];
}

/// Literal reference used for unanswerable questions.
pub const UNANSWERABLE: &str = "unanswerable";

/// One ⟨question, evidence, answer⟩ triple over a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletExample {
    pub id: String,
    pub document: Document,
    pub question: String,
    evidence_indices: BTreeSet<usize>,
    pub answers: Vec<String>,
    pub answer_type: AnswerType,
}

impl TripletExample {
    pub fn new(
        id: impl Into<String>,
        document: Document,
        question: impl Into<String>,
        evidence_indices: impl IntoIterator<Item = usize>,
        answers: Vec<String>,
        answer_type: AnswerType,
    ) -> Result<Self> {
        let id = id.into();
        let malformed = |reason: String| Error::MalformedRecord { id: id.clone(), reason };
        let question = question.into().trim().to_string();
        if question.is_empty() {
            return Err(malformed("empty question".into()));
        }
        let answers: Vec<String> = answers.into_iter().map(|a| a.trim().to_string()).collect();
        if answers.is_empty() {
            return Err(malformed("no reference answers".into()));
        }
        let evidence_indices: BTreeSet<usize> = evidence_indices.into_iter().collect();
        if let Some(&bad) = evidence_indices.iter().find(|&&i| i == 0 || i > document.len()) {
            return Err(malformed(format!(
                "evidence index {bad} outside 1..={}",
                document.len()
            )));
        }
        Ok(Self {
            id,
            document,
            question,
            evidence_indices,
            answers,
            answer_type,
        })
    }

    pub fn evidence_indices(&self) -> &BTreeSet<usize> {
        &self.evidence_indices
    }

    pub fn has_evidence(&self) -> bool {
        !self.evidence_indices.is_empty()
    }

    /// Evidence sentences in document order, joined by single spaces.
    pub fn evidence_text(&self) -> String {
        self.evidence_indices
            .iter()
            .filter_map(|&i| self.document.sentence(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A rejected source record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

/// Result of converting a native dataset file.
#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub examples: Vec<TripletExample>,
    pub rejected: Vec<Rejection>,
    /// Questions dropped because they carried zero gold answers.
    pub skipped_unanswered: usize,
    /// Examples kept without any evidence annotation.
    pub missing_evidence: usize,
    /// QASPER evidence passages that matched no document unit.
    pub unmatched_evidence: usize,
}

impl LoadOutcome {
    pub(crate) fn reject(&mut self, id: impl Into<String>, reason: impl Into<String>) {
        self.rejected.push(Rejection {
            id: id.into(),
            reason: reason.into(),
        });
    }

    pub(crate) fn push(&mut self, example: TripletExample) {
        if !example.has_evidence() {
            self.missing_evidence += 1;
        }
        self.examples.push(example);
    }
}

/// Deterministic subsample that draws round-robin across answer types, so
/// every type present in the input is represented when `n` allows it.
pub fn subsample_stratified(examples: &[TripletExample], n: usize, seed: u64) -> Vec<TripletExample> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<&TripletExample>> = AnswerType::ALL
        .iter()
        .map(|ty| examples.iter().filter(|e| e.answer_type == *ty).collect())
        .collect();
    for pool in &mut pools {
        pool.shuffle(&mut rng);
        pool.reverse();
    }
    let mut out = Vec::with_capacity(n.min(examples.len()));
    while out.len() < n && pools.iter().any(|p| !p.is_empty()) {
        for pool in &mut pools {
            if out.len() == n {
                break;
            }
            if let Some(ex) = pool.pop() {
                out.push(ex.clone());
            }
        }
    }
    out
}
