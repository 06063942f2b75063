//! MultiRC converter.
//!
//! Expects the original release layout: `{"data": [{"id", "paragraph": {"text",
//! "questions": [...]}}]}` where paragraph text carries `<b>Sent N: </b>`
//! labels separated by `<br>`, and `sentences_used` holds 0-based sentence
//! indices.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{AnswerType, Document, LoadOutcome, TripletExample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct MultiRcOptions {
    /// Emit one joined `"A, B"` reference instead of one reference per correct option.
    pub join_answers: bool,
}

#[derive(Deserialize)]
struct RawFile {
    #[serde(default)]
    data: Vec<Value>,
}

#[derive(Deserialize)]
struct RawEntry {
    id: String,
    paragraph: RawParagraph,
}

#[derive(Deserialize)]
struct RawParagraph {
    text: String,
    #[serde(default)]
    questions: Vec<RawQuestion>,
}

#[derive(Deserialize)]
struct RawQuestion {
    question: String,
    #[serde(default)]
    sentences_used: Vec<usize>,
    #[serde(default)]
    answers: Vec<RawAnswer>,
    #[serde(default)]
    idx: Option<Value>,
}

#[derive(Deserialize)]
struct RawAnswer {
    text: String,
    #[serde(rename = "isAnswer")]
    is_answer: bool,
}

/// Splits MultiRC paragraph markup into plain sentences.
pub fn split_paragraph(text: &str) -> Vec<String> {
    text.split("<br>")
        .map(|chunk| {
            let chunk = chunk.trim();
            match chunk.find("</b>") {
                Some(end) if chunk.starts_with("<b>") => &chunk[end + 4..],
                _ => chunk,
            }
        })
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn load_multirc(path: &Path, opts: MultiRcOptions) -> Result<LoadOutcome> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_multirc(&raw, opts)
}

pub fn parse_multirc(raw: &str, opts: MultiRcOptions) -> Result<LoadOutcome> {
    let mut outcome = LoadOutcome::default();
    if raw.trim().is_empty() {
        return Ok(outcome);
    }
    let file: RawFile = serde_json::from_str(raw).map_err(|e| Error::MalformedRecord {
        id: "<file>".into(),
        reason: e.to_string(),
    })?;

    for (i, value) in file.data.into_iter().enumerate() {
        let fallback_id = value
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("entry-{i}"));
        let entry: RawEntry = match serde_json::from_value(value) {
            Ok(e) => e,
            Err(e) => {
                outcome.reject(fallback_id, e.to_string());
                continue;
            }
        };
        let document = match Document::new(entry.id.clone(), split_paragraph(&entry.paragraph.text)) {
            Ok(d) => d,
            Err(e) => {
                outcome.reject(entry.id, e.to_string());
                continue;
            }
        };
        for (qi, q) in entry.paragraph.questions.into_iter().enumerate() {
            let qid = match &q.idx {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => qi.to_string(),
            };
            let id = format!("{}#q{}", entry.id, qid);
            let mut answers: Vec<String> = q
                .answers
                .iter()
                .filter(|a| a.is_answer)
                .map(|a| a.text.trim().to_string())
                .filter(|a| !a.is_empty())
                .collect();
            if answers.is_empty() {
                outcome.skipped_unanswered += 1;
                continue;
            }
            if opts.join_answers && answers.len() > 1 {
                answers = vec![answers.join(", ")];
            }
            let evidence = q.sentences_used.iter().map(|&s| s + 1);
            match TripletExample::new(
                id,
                document.clone(),
                q.question,
                evidence,
                answers,
                AnswerType::Abstractive,
            ) {
                Ok(ex) => outcome.push(ex),
                Err(Error::MalformedRecord { id, reason }) => outcome.reject(id, reason),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(outcome)
}
