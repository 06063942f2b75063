//! SQuAD-style answer normalization, exact match and bag-of-tokens F1.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Lowercase, punctuation to spaces, drop `a`/`an`/`the`, collapse whitespace.
///
/// Punctuation becomes a space rather than being deleted so that text decoded
/// from word-level tokens ("v - 22") and source text ("V-22") agree.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let spaced: String = lowered
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    spaced
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_refs(references: &[impl AsRef<str>]) -> Result<()> {
    if references.is_empty() {
        return Err(Error::invalid("no reference answers"));
    }
    Ok(())
}

/// True iff the normalized prediction equals any normalized reference.
pub fn exact_match(pred: &str, references: &[impl AsRef<str>]) -> Result<bool> {
    check_refs(references)?;
    let p = normalize(pred);
    Ok(references.iter().any(|r| normalize(r.as_ref()) == p))
}

/// F1 between two normalized token bags; both empty counts as a match.
pub fn f1_pair(pred: &str, reference: &str) -> f64 {
    let p = normalize(pred);
    let r = normalize(reference);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let rt: Vec<&str> = r.split_whitespace().collect();
    if pt.is_empty() || rt.is_empty() {
        return if pt.is_empty() && rt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &rt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    // harmonic mean of precision and recall, as a single division
    (2 * common) as f64 / (pt.len() + rt.len()) as f64
}

/// Best F1 over the references.
pub fn token_f1(pred: &str, references: &[impl AsRef<str>]) -> Result<f64> {
    check_refs(references)?;
    Ok(references.iter().map(|r| f1_pair(pred, r.as_ref())).fold(0.0, f64::max))
}

/// Token F1 of generated evidence; `None` when there is no gold evidence.
pub fn evidence_f1(pred_evidence: &str, gold_evidence: &str) -> Option<f64> {
    if normalize(gold_evidence).is_empty() {
        return None;
    }
    Some(f1_pair(pred_evidence, gold_evidence))
}
