//! Canonical one-record-per-line JSON format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnswerType, Document, TripletExample};
use crate::error::{Error, Result};

/// On-disk record. Field names and order are part of the file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalRecord {
    pub id: String,
    pub document_id: String,
    pub sentences: Vec<String>,
    pub question: String,
    /// 1-based, ascending.
    pub evidence_indices: Vec<usize>,
    pub answers: Vec<String>,
    pub answer_type: AnswerType,
}

impl From<&TripletExample> for CanonicalRecord {
    fn from(ex: &TripletExample) -> Self {
        Self {
            id: ex.id.clone(),
            document_id: ex.document.id.clone(),
            sentences: ex.document.sentences().to_vec(),
            question: ex.question.clone(),
            evidence_indices: ex.evidence_indices().iter().copied().collect(),
            answers: ex.answers.clone(),
            answer_type: ex.answer_type,
        }
    }
}

impl TryFrom<CanonicalRecord> for TripletExample {
    type Error = Error;

    fn try_from(rec: CanonicalRecord) -> Result<Self> {
        let document = Document::new(rec.document_id, rec.sentences).map_err(|e| match e {
            Error::MalformedRecord { reason, .. } => Error::MalformedRecord {
                id: rec.id.clone(),
                reason,
            },
            other => other,
        })?;
        TripletExample::new(
            rec.id,
            document,
            rec.question,
            rec.evidence_indices,
            rec.answers,
            rec.answer_type,
        )
    }
}

pub fn to_line(example: &TripletExample) -> String {
    serde_json::to_string(&CanonicalRecord::from(example)).expect("record serializes")
}

pub fn from_line(line: &str, line_no: usize) -> Result<TripletExample> {
    let rec: CanonicalRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
        id: format!("line {line_no}"),
        reason: e.to_string(),
    })?;
    rec.try_into()
}

pub fn write_jsonl(path: &Path, examples: &[TripletExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ex in examples {
        writeln!(out, "{}", to_line(ex)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a canonical file. Blank lines are ignored; any malformed line fails the read.
pub fn read_jsonl(path: &Path) -> Result<Vec<TripletExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(from_line(&line, i + 1)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_example() -> impl Strategy<Value = TripletExample> {
        (
            prop::collection::vec("[a-zA-Z][a-zA-Z ,.]{0,20}", 1..6),
            "[a-z]{1,10}\\?",
            prop::collection::vec("[a-z0-9 ]{0,8}[a-z0-9]", 1..3),
            prop::sample::select(AnswerType::ALL.to_vec()),
            any::<u64>(),
        )
            .prop_map(|(sentences, q, answers, ty, mask)| {
                let n = sentences.len();
                let evidence: Vec<usize> = (1..=n).filter(|i| mask >> i & 1 == 1).collect();
                let doc = Document::new("doc", sentences).unwrap();
                TripletExample::new("ex", doc, q, evidence, answers, ty).unwrap()
            })
    }

    proptest! {
        #[test]
        fn canonical_form_is_a_fixed_point(ex in arb_example()) {
            let once = to_line(&ex);
            let reparsed = from_line(&once, 1).unwrap();
            prop_assert_eq!(&once, &to_line(&reparsed));
            prop_assert_eq!(reparsed, ex);
        }
    }

    #[test]
    fn field_names_are_fixed() {
        let doc = Document::new("d1", vec!["A b.".into()]).unwrap();
        let ex = TripletExample::new("e1", doc, "q?", [1], vec!["b".into()], AnswerType::YesNo).unwrap();
        assert_eq!(
            to_line(&ex),
            r#"{"id":"e1","document_id":"d1","sentences":["A b."],"question":"q?","evidence_indices":[1],"answers":["b"],"answer_type":"yes_no"}"#
        );
    }

    #[test]
    fn malformed_line_reports_reason() {
        let err = from_line(r#"{"id":"e1"}"#, 7).unwrap_err();
        assert!(err.to_string().contains("line 7"));
        let err = from_line(
            r#"{"id":"e2","document_id":"d","sentences":["x"],"question":"q","evidence_indices":[2],"answers":["a"],"answer_type":"extractive"}"#,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("e2"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let ex = super::super::synthetic::evidence_corpus(5, 1);
        write_jsonl(&path, &ex).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), ex);
    }
}
