use serde::{Deserialize, Serialize};

use super::TripletExample;
use crate::error::{Error, Result};

/// Mean and quartile boundaries of one per-example quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Some(Self {
            mean,
            q1: percentile(&sorted, 0.25),
            median: percentile(&sorted, 0.5),
            q3: percentile(&sorted, 0.75),
        })
    }
}

// linear interpolation between closest ranks
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub example_count: usize,
    pub doc_tokens: Summary,
    pub sentence_count: Summary,
    pub missing_evidence: usize,
    /// Example indices per document-length quartile group (ascending).
    pub length_groups: [Vec<usize>; 4],
    /// Example indices per sentence-count quartile group (ascending).
    pub sentence_groups: [Vec<usize>; 4],
}

pub fn compute_stats(corpus: &[TripletExample]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot compute statistics of an empty corpus"));
    }
    let lengths: Vec<f64> = corpus.iter().map(|e| e.document.token_len() as f64).collect();
    let counts: Vec<f64> = corpus.iter().map(|e| e.document.len() as f64).collect();
    let ids: Vec<&str> = corpus.iter().map(|e| e.id.as_str()).collect();
    Ok(CorpusStats {
        example_count: corpus.len(),
        doc_tokens: Summary::of(&lengths).expect("non-empty"),
        sentence_count: Summary::of(&counts).expect("non-empty"),
        missing_evidence: corpus.iter().filter(|e| !e.has_evidence()).count(),
        length_groups: quartile_partition(&lengths, &ids),
        sentence_groups: quartile_partition(&counts, &ids),
    })
}

/// Splits items into four ascending groups whose sizes differ by at most one.
///
/// Items are ordered by `key`, ties broken by lexicographic `id`. The first
/// `n % 4` groups receive the extra item.
pub fn quartile_partition(keys: &[f64], ids: &[&str]) -> [Vec<usize>; 4] {
    equal_bins(keys, ids, 4)
        .try_into()
        .expect("equal_bins returns the requested bin count")
}

/// Sorted equal-size binning used by both quartile grouping and correlation bins.
pub fn equal_bins(keys: &[f64], ids: &[&str], bins: usize) -> Vec<Vec<usize>> {
    assert_eq!(keys.len(), ids.len());
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then_with(|| ids[a].cmp(ids[b])));
    let n = order.len();
    let base = n / bins;
    let extra = n % bins;
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for g in 0..bins {
        let size = base + usize::from(g < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    out
}
