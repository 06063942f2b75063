//! QASPER converter.
//!
//! Document units are the abstract followed by every non-empty full-text
//! paragraph; QASPER evidence is annotated at paragraph granularity, so
//! paragraphs play the role of sentences here.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use super::{AnswerType, Document, LoadOutcome, TripletExample, UNANSWERABLE};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawPaper {
    #[serde(rename = "abstract", default)]
    abstract_text: Option<String>,
    #[serde(default)]
    full_text: Vec<RawSection>,
    #[serde(default)]
    qas: Vec<RawQa>,
}

#[derive(Deserialize)]
struct RawSection {
    #[serde(default)]
    paragraphs: Vec<String>,
}

#[derive(Deserialize)]
struct RawQa {
    question: String,
    question_id: String,
    #[serde(default)]
    answers: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    answer: RawAnswer,
}

#[derive(Deserialize)]
struct RawAnswer {
    #[serde(default)]
    unanswerable: bool,
    #[serde(default)]
    extractive_spans: Vec<String>,
    #[serde(default)]
    yes_no: Option<bool>,
    #[serde(default)]
    free_form_answer: String,
    #[serde(default)]
    evidence: Vec<String>,
}

impl RawAnswer {
    fn typed(&self) -> Option<(AnswerType, String)> {
        if self.unanswerable {
            return Some((AnswerType::Unanswerable, UNANSWERABLE.to_string()));
        }
        if let Some(yes) = self.yes_no {
            let text = if yes { "yes" } else { "no" };
            return Some((AnswerType::YesNo, text.to_string()));
        }
        let spans: Vec<&str> = self
            .extractive_spans
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect();
        if !spans.is_empty() {
            return Some((AnswerType::Extractive, spans.join(", ")));
        }
        let free = self.free_form_answer.trim();
        (!free.is_empty()).then(|| (AnswerType::Abstractive, free.to_string()))
    }
}

pub fn load_qasper(path: &Path) -> Result<LoadOutcome> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qasper(&raw)
}

pub fn parse_qasper(raw: &str) -> Result<LoadOutcome> {
    let mut outcome = LoadOutcome::default();
    if raw.trim().is_empty() {
        return Ok(outcome);
    }
    let papers: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(raw).map_err(|e| Error::MalformedRecord {
            id: "<file>".into(),
            reason: e.to_string(),
        })?;

    for (paper_id, value) in papers {
        let paper: RawPaper = match serde_json::from_value(value) {
            Ok(p) => p,
            Err(e) => {
                outcome.reject(paper_id, e.to_string());
                continue;
            }
        };
        let mut units: Vec<String> = Vec::new();
        if let Some(a) = &paper.abstract_text {
            if !a.trim().is_empty() {
                units.push(a.trim().to_string());
            }
        }
        units.extend(
            paper
                .full_text
                .iter()
                .flat_map(|s| s.paragraphs.iter())
                .map(|p| p.trim().to_string())
                .filter(|p| !p.is_empty()),
        );
        let document = match Document::new(paper_id.clone(), units) {
            Ok(d) => d,
            Err(e) => {
                outcome.reject(paper_id, e.to_string());
                continue;
            }
        };
        let position: BTreeMap<&str, usize> = document
            .sentences()
            .iter()
            .enumerate()
            .rev()
            .map(|(i, s)| (s.as_str(), i + 1))
            .collect();

        for qa in paper.qas {
            let mut answers: Vec<String> = Vec::new();
            let mut answer_type = None;
            let mut evidence = BTreeSet::new();
            for ann in &qa.answers {
                let Some((ty, text)) = ann.answer.typed() else {
                    continue;
                };
                answer_type.get_or_insert(ty);
                if !answers.contains(&text) {
                    answers.push(text);
                }
                for ev in &ann.answer.evidence {
                    match position.get(ev.trim()) {
                        Some(&pos) => {
                            evidence.insert(pos);
                        }
                        None => outcome.unmatched_evidence += 1,
                    }
                }
            }
            let Some(answer_type) = answer_type else {
                outcome.skipped_unanswered += 1;
                continue;
            };
            match TripletExample::new(
                qa.question_id,
                document.clone(),
                qa.question,
                evidence,
                answers,
                answer_type,
            ) {
                Ok(ex) => outcome.push(ex),
                Err(Error::MalformedRecord { id, reason }) => outcome.reject(id, reason),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = include_str!("../../tests/fixtures/qasper_small.json");

    fn by_id<'a>(out: &'a LoadOutcome, id: &str) -> &'a TripletExample {
        out.examples.iter().find(|e| e.id == id).unwrap()
    }

    #[test]
    fn yes_no_is_normalized() {
        let out = parse_qasper(FIXTURE).unwrap();
        let ex = by_id(&out, "q-yes");
        assert_eq!(ex.answer_type, AnswerType::YesNo);
        assert_eq!(ex.answers, ["yes"]);
        let ex = by_id(&out, "q-no");
        assert_eq!(ex.answers, ["no"]);
    }

    #[test]
    fn unanswerable_gets_canonical_literal() {
        let out = parse_qasper(FIXTURE).unwrap();
        let ex = by_id(&out, "q-unans");
        assert_eq!(ex.answer_type, AnswerType::Unanswerable);
        assert_eq!(ex.answers, [UNANSWERABLE]);
    }

    #[test]
    fn missing_evidence_is_kept_and_flagged() {
        let out = parse_qasper(FIXTURE).unwrap();
        let ex = by_id(&out, "q-unans");
        assert!(ex.evidence_indices().is_empty());
        assert!(out.missing_evidence >= 1);
    }

    #[test]
    fn all_annotator_answers_are_kept() {
        let out = parse_qasper(FIXTURE).unwrap();
        let ex = by_id(&out, "q-extract");
        assert_eq!(ex.answer_type, AnswerType::Extractive);
        assert_eq!(ex.answers, ["BERT encoder", "a BERT encoder with a linear head"]);
        // both annotators cite different paragraphs, plus one table caption that matches nothing
        assert_eq!(ex.evidence_indices().iter().copied().collect::<Vec<_>>(), [2, 3]);
        assert_eq!(out.unmatched_evidence, 1);
    }

    #[test]
    fn abstractive_answers_use_free_form_text() {
        let out = parse_qasper(FIXTURE).unwrap();
        let ex = by_id(&out, "q-free");
        assert_eq!(ex.answer_type, AnswerType::Abstractive);
        assert_eq!(ex.answers, ["They compare against three prior systems"]);
    }

    #[test]
    fn annotation_free_question_is_skipped() {
        let out = parse_qasper(FIXTURE).unwrap();
        assert_eq!(out.skipped_unanswered, 1);
        assert!(out.examples.iter().all(|e| e.id != "q-empty"));
    }
}
