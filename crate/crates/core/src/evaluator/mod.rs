//! Generation-based evaluation.
//!
//! Answers come from the evidence-free prompt by default; `with_evidence`
//! first generates evidence and then answers from the evidence-conditioned
//! prompt. Scores are kept per example so the analysis module can regroup
//! them.

pub mod metrics;

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::LanguageModel;
use crate::corpus::TripletExample;
use crate::error::{Error, Result};
use crate::prompting::{Fields, Prompter, RenderedInstance, Task, Tokenizer};

pub use metrics::{evidence_f1, exact_match, f1_pair, normalize, token_f1};

/// Which generations to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTasks {
    /// Answer generation, scored by EM and F1.
    pub qa: bool,
    /// Answer-aware evidence generation, scored by evidence F1.
    pub evidence: bool,
    /// Answering from gold evidence, scored by F1.
    pub qea: bool,
    /// Question restoration from gold evidence and answer, scored by F1.
    pub question: bool,
}

impl Default for EvalTasks {
    fn default() -> Self {
        Self {
            qa: true,
            evidence: false,
            qea: false,
            question: false,
        }
    }
}

impl EvalTasks {
    pub fn all() -> Self {
        Self {
            qa: true,
            evidence: true,
            qea: true,
            question: true,
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        [
            (self.qa, "qa"),
            (self.evidence, "evidence"),
            (self.qea, "qea"),
            (self.question, "question"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect()
    }
}

impl FromStr for EvalTasks {
    type Err = Error;

    /// Comma-separated subset of `qa,evidence,qea,question`.
    fn from_str(s: &str) -> Result<Self> {
        let mut t = EvalTasks {
            qa: false,
            evidence: false,
            qea: false,
            question: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "qa" => t.qa = true,
                "evidence" => t.evidence = true,
                "qea" => t.qea = true,
                "question" => t.question = true,
                other => return Err(Error::invalid(format!("unknown evaluation task {other:?}"))),
            }
        }
        if t.names().is_empty() {
            return Err(Error::invalid("no evaluation tasks selected"));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tasks: EvalTasks,
    pub with_evidence: bool,
    pub max_new_tokens: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tasks: EvalTasks::default(),
            with_evidence: false,
            max_new_tokens: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub task: Task,
    pub text: String,
    pub normalized: String,
}

impl Prediction {
    fn new(id: &str, task: Task, text: String) -> Self {
        Self {
            id: id.to_string(),
            task,
            normalized: normalize(&text),
            text,
        }
    }
}

/// Scores for one example, in percent. Absent fields were not requested or
/// could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub answer_type: crate::corpus::AnswerType,
    pub doc_tokens: usize,
    pub sentences: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evidence_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qea_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eaq_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub task: Task,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
    pub tasks: Vec<String>,
    pub with_evidence: bool,
    pub examples: usize,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub evidence_f1: Option<f64>,
    /// Examples scored for evidence F1.
    pub evidence_scored: usize,
    /// Examples without gold evidence, left out of evidence F1.
    pub evidence_excluded: usize,
    pub qea_f1: Option<f64>,
    pub eaq_f1: Option<f64>,
    pub failures: Vec<Failure>,
    pub records: Vec<ExampleRecord>,
}

fn mean_of(records: &[ExampleRecord], f: impl Fn(&ExampleRecord) -> Option<f64>) -> (Option<f64>, usize) {
    let vals: Vec<f64> = records.iter().filter_map(f).collect();
    if vals.is_empty() {
        (None, 0)
    } else {
        (Some(vals.iter().sum::<f64>() / vals.len() as f64), vals.len())
    }
}

impl EvalReport {
    /// Aggregates per-example records into corpus means.
    pub fn from_records(
        records: Vec<ExampleRecord>,
        failures: Vec<Failure>,
        options: &EvalOptions,
        config_hash: Option<String>,
    ) -> Self {
        let (em, _) = mean_of(&records, |r| r.em);
        let (f1, _) = mean_of(&records, |r| r.f1);
        let (evidence_f1, evidence_scored) = mean_of(&records, |r| r.evidence_f1);
        let (qea_f1, _) = mean_of(&records, |r| r.qea_f1);
        let (eaq_f1, _) = mean_of(&records, |r| r.eaq_f1);
        let evidence_excluded = if options.tasks.evidence {
            records.len() - evidence_scored
        } else {
            0
        };
        Self {
            config_hash,
            tasks: options.tasks.names().into_iter().map(str::to_string).collect(),
            with_evidence: options.with_evidence,
            examples: records.len(),
            em,
            f1,
            evidence_f1,
            evidence_scored,
            evidence_excluded,
            qea_f1,
            eaq_f1,
            failures,
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Greedy continuation of `inst`'s prompt, decoded to text.
pub fn generate_text(
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
    inst: &RenderedInstance,
    max_new: usize,
) -> Result<String> {
    let out = model.generate(inst.prompt_ids(), max_new, tok.eos())?;
    Ok(tok.decode(&out))
}

struct ExampleEval {
    record: ExampleRecord,
    predictions: Vec<Prediction>,
    failures: Vec<Failure>,
}

struct Ctx<'a> {
    model: &'a dyn LanguageModel,
    tok: &'a dyn Tokenizer,
    prompter: &'a Prompter,
    options: &'a EvalOptions,
}

impl Ctx<'_> {
    fn run(&self, task: Task, ex: &TripletExample, fields: &Fields<'_>) -> Result<String> {
        let inst = self.prompter.render_prompt(task, &ex.id, fields, self.tok)?;
        generate_text(self.model, self.tok, &inst, self.options.max_new_tokens)
    }

    fn example(&self, ex: &TripletExample) -> ExampleEval {
        let tasks = self.options.tasks;
        let gold_evidence = ex.evidence_text();
        let gold_answer = self.prompter.answer_text(ex);
        let gold = Fields {
            document: ex.document.sentences(),
            question: &ex.question,
            evidence: &gold_evidence,
            answer: &gold_answer,
        };
        let mut out = ExampleEval {
            record: ExampleRecord {
                id: ex.id.clone(),
                answer_type: ex.answer_type,
                doc_tokens: ex.document.token_len(),
                sentences: ex.document.len(),
                em: None,
                f1: None,
                evidence_f1: None,
                qea_f1: None,
                eaq_f1: None,
            },
            predictions: Vec::new(),
            failures: Vec::new(),
        };
        // failures yield an empty prediction, which scores zero
        let attempt = |task: Task, result: Result<String>, out: &mut ExampleEval| -> String {
            let text = result.unwrap_or_else(|e| {
                out.failures.push(Failure {
                    id: ex.id.clone(),
                    task,
                    reason: e.to_string(),
                });
                String::new()
            });
            out.predictions.push(Prediction::new(&ex.id, task, text.clone()));
            text
        };

        if tasks.qa {
            let answer = if self.options.with_evidence {
                let blank = Fields { answer: "", ..gold };
                let evidence = self.run(Task::Qae, ex, &blank);
                let evidence = attempt(Task::Qae, evidence, &mut out);
                let predicted = Fields {
                    evidence: &evidence,
                    ..gold
                };
                let answer = self.run(Task::Qea, ex, &predicted);
                attempt(Task::Qea, answer, &mut out)
            } else {
                let answer = self.run(Task::QaPlain, ex, &gold);
                attempt(Task::QaPlain, answer, &mut out)
            };
            let em = exact_match(&answer, &ex.answers).unwrap_or(false);
            let f1 = token_f1(&answer, &ex.answers).unwrap_or(0.0);
            out.record.em = Some(if em { 100.0 } else { 0.0 });
            out.record.f1 = Some(100.0 * f1);
        }
        if tasks.evidence && ex.has_evidence() {
            let evidence = self.run(Task::Qae, ex, &gold);
            let evidence = attempt(Task::Qae, evidence, &mut out);
            out.record.evidence_f1 = evidence_f1(&evidence, &gold_evidence).map(|v| 100.0 * v);
        }
        if tasks.qea {
            let answer = self.run(Task::Qea, ex, &gold);
            let answer = attempt(Task::Qea, answer, &mut out);
            out.record.qea_f1 = Some(100.0 * token_f1(&answer, &ex.answers).unwrap_or(0.0));
        }
        if tasks.question && ex.has_evidence() {
            let question = self.run(Task::Eaq, ex, &gold);
            let question = attempt(Task::Eaq, question, &mut out);
            out.record.eaq_f1 = Some(100.0 * f1_pair(&question, &ex.question));
        }
        out
    }
}

/// Generates and scores every requested task over `corpus`. Examples are
/// processed in parallel and aggregated in corpus order.
pub fn evaluate(
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
    prompter: &Prompter,
    corpus: &[TripletExample],
    options: &EvalOptions,
) -> Result<(EvalReport, Vec<Prediction>)> {
    if corpus.is_empty() {
        return Err(Error::invalid("evaluation corpus is empty"));
    }
    let ctx = Ctx {
        model,
        tok,
        prompter,
        options,
    };
    let results: Vec<ExampleEval> = corpus.par_iter().map(|ex| ctx.example(ex)).collect();
    let mut records = Vec::with_capacity(results.len());
    let mut predictions = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        records.push(r.record);
        predictions.extend(r.predictions);
        failures.extend(r.failures);
    }
    Ok((EvalReport::from_records(records, failures, options, None), predictions))
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
