//! Post-hoc analyses over evaluation records and model internals.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::backbone::LanguageModel;
use crate::corpus::stats::{equal_bins, quartile_partition};
use crate::corpus::TripletExample;
use crate::error::{Error, Result};
use crate::evaluator::{exact_match, generate_text, ExampleRecord};
use crate::prompting::{Fields, Prompter, RenderedInstance, Segment, Slot, Task, Tokenizer};

/// Two-column series for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    /// Tab-separated with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\t{}\n", self.x_label, self.y_label);
        for (x, y) in &self.points {
            writeln!(out, "{x}\t{y}").expect("string write");
        }
        out
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    DocLength,
    SentenceCount,
}

impl std::str::FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "doc_length" => Ok(GroupKey::DocLength),
            "sentence_count" => Ok(GroupKey::SentenceCount),
            other => Err(Error::invalid(format!("unknown grouping key {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub index: usize,
    pub size: usize,
    pub mean_key: f64,
    pub f1: f64,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedReport {
    pub key: GroupKey,
    pub groups: Vec<Group>,
}

impl GroupedReport {
    pub fn plot(&self) -> PlotSeries {
        PlotSeries {
            name: format!("groups_{}", serde_json::to_value(self.key).unwrap().as_str().unwrap()),
            x_label: "mean_key".into(),
            y_label: "f1".into(),
            points: self.groups.iter().map(|g| (g.mean_key, g.f1)).collect(),
        }
    }
}

/// Quartile groups by document length or sentence count with mean answer F1.
pub fn grouped_f1(records: &[ExampleRecord], key: GroupKey) -> Result<GroupedReport> {
    if records.len() < 4 {
        return Err(Error::invalid(format!(
            "grouping needs at least 4 records, got {}",
            records.len()
        )));
    }
    let f1s: Vec<f64> = records
        .iter()
        .map(|r| {
            r.f1.ok_or_else(|| Error::invalid(format!("record {} has no answer F1", r.id)))
        })
        .collect::<Result<_>>()?;
    let keys: Vec<f64> = records
        .iter()
        .map(|r| match key {
            GroupKey::DocLength => r.doc_tokens as f64,
            GroupKey::SentenceCount => r.sentences as f64,
        })
        .collect();
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let groups = quartile_partition(&keys, &ids)
        .iter()
        .enumerate()
        .map(|(index, members)| Group {
            index,
            size: members.len(),
            mean_key: mean(members.iter().map(|&i| keys[i])),
            f1: mean(members.iter().map(|&i| f1s[i])),
            ids: members.iter().map(|&i| ids[i].to_string()).collect(),
        })
        .collect();
    Ok(GroupedReport { key, groups })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares; `None` when `x` has no spread.
pub fn least_squares(points: &[(f64, f64)]) -> Option<LinearFit> {
    if points.len() < 2 {
        return None;
    }
    let mx = mean(points.iter().map(|p| p.0));
    let my = mean(points.iter().map(|p| p.1));
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * points.len() as f64 * (1.0 + mx * mx) {
        return None;
    }
    let slope = sxy / sxx;
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub size: usize,
    pub qea: f64,
    pub qae: f64,
    pub eaq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub requested_bins: usize,
    pub bins: Vec<Bin>,
    /// Set when there were fewer usable records than requested bins.
    pub reduced: bool,
    /// Records lacking one of the three scores.
    pub skipped_records: usize,
    pub qea_vs_qae: Option<LinearFit>,
    pub qea_vs_eaq: Option<LinearFit>,
    pub qae_vs_eaq: Option<LinearFit>,
}

impl CorrelationReport {
    pub fn plots(&self) -> Vec<PlotSeries> {
        let series = |name: &str, x: &str, y: &str, f: &dyn Fn(&Bin) -> (f64, f64)| PlotSeries {
            name: name.into(),
            x_label: x.into(),
            y_label: y.into(),
            points: self.bins.iter().map(f).collect(),
        };
        vec![
            series("correlation_qea_qae", "qea_f1", "qae_f1", &|b| (b.qea, b.qae)),
            series("correlation_qea_eaq", "qea_f1", "eaq_f1", &|b| (b.qea, b.eaq)),
            series("correlation_qae_eaq", "qae_f1", "eaq_f1", &|b| (b.qae, b.eaq)),
        ]
    }
}

/// Equal-size bins ordered by answering F1, with per-bin mean scores of
/// the three tasks and a linear fit for each pair.
pub fn correlation(records: &[ExampleRecord], bins: usize) -> Result<CorrelationReport> {
    if bins == 0 {
        return Err(Error::invalid("bin count must be positive"));
    }
    let rows: Vec<(&str, [f64; 3])> = records
        .iter()
        .filter_map(|r| Some((r.id.as_str(), [r.qea_f1?, r.evidence_f1?, r.eaq_f1?])))
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("no record has answering, evidence and question scores"));
    }
    let used = bins.min(rows.len());
    let keys: Vec<f64> = rows.iter().map(|r| r.1[0]).collect();
    let ids: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let binned: Vec<Bin> = equal_bins(&keys, &ids, used)
        .iter()
        .map(|members| Bin {
            size: members.len(),
            qea: mean(members.iter().map(|&i| rows[i].1[0])),
            qae: mean(members.iter().map(|&i| rows[i].1[1])),
            eaq: mean(members.iter().map(|&i| rows[i].1[2])),
        })
        .collect();
    let fit = |f: &dyn Fn(&Bin) -> (f64, f64)| least_squares(&binned.iter().map(f).collect::<Vec<_>>());
    Ok(CorrelationReport {
        requested_bins: bins,
        reduced: used < bins,
        skipped_records: records.len() - rows.len(),
        qea_vs_qae: fit(&|b| (b.qea, b.qae)),
        qea_vs_eaq: fit(&|b| (b.qea, b.eaq)),
        qae_vs_eaq: fit(&|b| (b.qae, b.eaq)),
        bins: binned,
    })
}

fn undefined_if_none<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("undefined"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub id: String,
    pub question_only: String,
    pub with_document: String,
    pub question_only_correct: bool,
    pub with_document_correct: bool,
}

/// Correctness of question-only and question+document answering, scored by
/// exact match.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HallucinationReport {
    pub examples: usize,
    /// P(question-only answer is correct)
    pub p_q_correct: f64,
    /// P(document answer correct | question-only correct)
    #[serde(serialize_with = "undefined_if_none")]
    pub p_qd_correct_given_q_correct: Option<f64>,
    /// P(document answer correct | question-only wrong)
    #[serde(serialize_with = "undefined_if_none")]
    pub p_qd_correct_given_q_wrong: Option<f64>,
    pub records: Vec<ProbeRecord>,
}

impl HallucinationReport {
    pub fn from_records(records: Vec<ProbeRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("hallucination probe needs at least one example"));
        }
        let n = records.len() as f64;
        let q_right: Vec<&ProbeRecord> = records.iter().filter(|r| r.question_only_correct).collect();
        let q_wrong: Vec<&ProbeRecord> = records.iter().filter(|r| !r.question_only_correct).collect();
        let cond = |set: &[&ProbeRecord]| {
            (!set.is_empty()).then(|| set.iter().filter(|r| r.with_document_correct).count() as f64 / set.len() as f64)
        };
        Ok(Self {
            examples: records.len(),
            p_q_correct: q_right.len() as f64 / n,
            p_qd_correct_given_q_correct: cond(&q_right),
            p_qd_correct_given_q_wrong: cond(&q_wrong),
            records,
        })
    }
}

/// Answers every example twice, once without and once with the document.
pub fn hallucination_probe(
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
    prompter: &Prompter,
    corpus: &[TripletExample],
    max_new: usize,
) -> Result<HallucinationReport> {
    let mut question_only = prompter.clone();
    question_only.options.omit_document = true;
    let mut with_document = prompter.clone();
    with_document.options.omit_document = false;
    let records: Vec<Result<ProbeRecord>> = corpus
        .par_iter()
        .map(|ex| {
            let fields = Fields {
                document: ex.document.sentences(),
                question: &ex.question,
                evidence: "",
                answer: "",
            };
            let answer = |p: &Prompter| -> Result<String> {
                let inst = p.render_prompt(Task::QaPlain, &ex.id, &fields, tok)?;
                generate_text(model, tok, &inst, max_new)
            };
            let q = answer(&question_only)?;
            let qd = answer(&with_document)?;
            Ok(ProbeRecord {
                id: ex.id.clone(),
                question_only_correct: exact_match(&q, &ex.answers)?,
                with_document_correct: exact_match(&qd, &ex.answers)?,
                question_only: q,
                with_document: qd,
            })
        })
        .collect();
    HallucinationReport::from_records(records.into_iter().collect::<Result<_>>()?)
}

/// Summed attention mass per layer from the rows of `from` to each span in
/// `to`, averaged over heads, then over the `from` rows.
///
/// Only rows and columns inside the instance's content are read, so trailing
/// padding has no effect.
pub fn segment_attention(
    model: &dyn LanguageModel,
    inst: &RenderedInstance,
    from: Range<usize>,
    to: &[Range<usize>],
) -> Result<Vec<Vec<f64>>> {
    if from.is_empty() {
        return Err(Error::invalid(format!("{}: empty source segment", inst.example_id)));
    }
    let out = model.forward(&inst.token_ids, true)?;
    let layers = out
        .attention
        .ok_or_else(|| Error::invalid("backbone returned no attention weights"))?;
    let offset = model.prefix_len();
    Ok(layers
        .iter()
        .map(|att| {
            let heads = att.shape()[0] as f64;
            to.iter()
                .map(|span| {
                    let mut total = 0.0;
                    for row in from.clone() {
                        for col in span.clone() {
                            total += att.slice(ndarray::s![.., row, offset + col]).sum() / heads;
                        }
                    }
                    total / from.len() as f64
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAttention {
    pub layer: usize,
    /// Answer rows of the evidence-enhanced answering prompt.
    pub qea_to_document: f64,
    pub qea_to_evidence: f64,
    /// Question rows of the question restoration prompt.
    pub eaq_to_evidence: f64,
    pub eaq_to_answer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub qea_examples: usize,
    pub eaq_examples: usize,
    pub layers: Vec<LayerAttention>,
}

impl AttentionReport {
    pub fn plots(&self) -> Vec<PlotSeries> {
        let series = |name: &str, f: &dyn Fn(&LayerAttention) -> f64| PlotSeries {
            name: name.into(),
            x_label: "layer".into(),
            y_label: "weight".into(),
            points: self.layers.iter().map(|l| (l.layer as f64, f(l))).collect(),
        };
        vec![
            series("attention_qea_document", &|l| l.qea_to_document),
            series("attention_qea_evidence", &|l| l.qea_to_evidence),
            series("attention_eaq_evidence", &|l| l.eaq_to_evidence),
            series("attention_eaq_answer", &|l| l.eaq_to_answer),
        ]
    }
}

// per layer, the attention share of each measured segment
type LayerShares = Vec<Vec<f64>>;

/// Teacher-forced attention statistics. In the restoration task the gold
/// question plays the role of the generated one.
pub fn attention_stats(
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
    prompter: &Prompter,
    corpus: &[TripletExample],
) -> Result<AttentionReport> {
    if corpus.is_empty() {
        return Err(Error::invalid("attention statistics need at least one example"));
    }
    let per_example: Vec<Result<(LayerShares, Option<LayerShares>)>> = corpus
        .par_iter()
        .map(|ex| {
            let qea = prompter.render(Task::Qea, ex, tok)?;
            let answer = qea.segment(Segment::content(Slot::Answer));
            let qea_w = segment_attention(
                model,
                &qea,
                answer,
                &[qea.segment(Segment::Document), qea.segment(Segment::Evidence)],
            )?;
            let eaq_w = if ex.has_evidence() {
                let eaq = prompter.render(Task::Eaq, ex, tok)?;
                let question = eaq.segment(Segment::content(Slot::Question));
                Some(segment_attention(
                    model,
                    &eaq,
                    question,
                    &[eaq.segment(Segment::Evidence), eaq.segment(Segment::Answer)],
                )?)
            } else {
                None
            };
            Ok((qea_w, eaq_w))
        })
        .collect();
    let per_example: Vec<_> = per_example.into_iter().collect::<Result<_>>()?;
    let n_layers = per_example[0].0.len();
    let eaq_examples = per_example.iter().filter(|e| e.1.is_some()).count();
    let layers = (0..n_layers)
        .map(|l| LayerAttention {
            layer: l,
            qea_to_document: mean(per_example.iter().map(|e| e.0[l][0])),
            qea_to_evidence: mean(per_example.iter().map(|e| e.0[l][1])),
            eaq_to_evidence: mean(per_example.iter().filter_map(|e| e.1.as_ref().map(|w| w[l][0]))),
            eaq_to_answer: mean(per_example.iter().filter_map(|e| e.1.as_ref().map(|w| w[l][1]))),
        })
        .collect();
    Ok(AttentionReport {
        qea_examples: per_example.len(),
        eaq_examples,
        layers,
    })
}
