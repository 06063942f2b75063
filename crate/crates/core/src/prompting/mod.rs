//! Instruction templates rendered into token sequences with loss masks.
//!
//! Every rendering has the shape
//!
//! ```text
//! <bos> <instruction>
//! [Document] <D>
//! [Question] <q>
//! [Evidence] <e>
//! [Answer] <a> <eos>
//! ```
//!
//! with the slots each task does not condition on left out and the target
//! slot moved to the end. Only the target tokens and the closing EOS carry
//! loss.

pub mod template;
pub mod tokenizer;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::TripletExample;
use crate::error::{Error, Result};

pub use template::{Slot, Task, TemplateSet};
pub use tokenizer::{Tokenizer, WordTokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Bos,
    Instruction,
    DocumentLabel,
    Document,
    QuestionLabel,
    Question,
    EvidenceLabel,
    Evidence,
    AnswerLabel,
    Answer,
}

impl Segment {
    pub fn content(slot: Slot) -> Self {
        match slot {
            Slot::Document => Segment::Document,
            Slot::Question => Segment::Question,
            Slot::Evidence => Segment::Evidence,
            Slot::Answer => Segment::Answer,
        }
    }

    pub fn label(slot: Slot) -> Self {
        match slot {
            Slot::Document => Segment::DocumentLabel,
            Slot::Question => Segment::QuestionLabel,
            Slot::Evidence => Segment::EvidenceLabel,
            Slot::Answer => Segment::AnswerLabel,
        }
    }
}

/// How multiple reference answers become one training target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerTarget {
    /// All references joined with ", ".
    #[default]
    Joined,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Whether the question-restoration prompt sees the document.
    pub eaq_include_document: bool,
    /// Drop the document block from every task except question restoration
    /// (question-only prompts for the hallucination probe).
    pub omit_document: bool,
    pub answer_target: AnswerTarget,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            eaq_include_document: false,
            omit_document: false,
            answer_target: AnswerTarget::Joined,
        }
    }
}

/// Slot contents for one rendering.
#[derive(Debug, Clone, Copy)]
pub struct Fields<'a> {
    pub document: &'a [String],
    pub question: &'a str,
    pub evidence: &'a str,
    pub answer: &'a str,
}

impl Fields<'_> {
    fn text(&self, slot: Slot) -> &str {
        match slot {
            Slot::Question => self.question,
            Slot::Evidence => self.evidence,
            Slot::Answer => self.answer,
            Slot::Document => unreachable!("document is rendered sentence by sentence"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedInstance {
    pub example_id: String,
    pub task: Task,
    pub token_ids: Vec<u32>,
    /// `loss_mask[t]` marks token `t` as a prediction target (scored from position `t - 1`).
    pub loss_mask: Vec<bool>,
    pub segments: BTreeMap<Segment, Range<usize>>,
    pub truncated: bool,
    pub dropped_sentences: usize,
}

impl RenderedInstance {
    /// Target span, including the closing EOS.
    pub fn target_range(&self) -> Range<usize> {
        self.segments[&Segment::content(self.task.target())].clone()
    }

    /// Tokens preceding the target: the generation prompt.
    pub fn prompt_ids(&self) -> &[u32] {
        &self.token_ids[..self.target_range().start]
    }

    pub fn target_ids(&self) -> &[u32] {
        &self.token_ids[self.target_range()]
    }

    pub fn loss_positions(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// Length of the non-padding prefix.
    pub fn content_len(&self) -> usize {
        self.segments.values().map(|r| r.end).max().unwrap_or(0)
    }

    pub fn segment(&self, seg: Segment) -> Range<usize> {
        self.segments.get(&seg).cloned().unwrap_or(0..0)
    }

    /// Copy right-padded to `len` with `pad`, mask false on padding.
    pub fn padded(&self, len: usize, pad: u32) -> Self {
        let mut out = self.clone();
        if len > out.token_ids.len() {
            out.token_ids.resize(len, pad);
            out.loss_mask.resize(len, false);
        }
        out
    }

    /// Structured debug line.
    pub fn debug_json(&self, tok: &dyn Tokenizer) -> serde_json::Value {
        let segments: BTreeMap<String, serde_json::Value> = self
            .segments
            .iter()
            .map(|(seg, r)| {
                let name = serde_json::to_value(seg).unwrap().as_str().unwrap().to_string();
                let text = tok.decode(&self.token_ids[r.clone()]);
                (name, serde_json::json!({"start": r.start, "end": r.end, "text": text}))
            })
            .collect();
        serde_json::json!({
            "example_id": self.example_id,
            "task": self.task,
            "token_ids": self.token_ids,
            "loss_mask": self.loss_mask,
            "segments": segments,
            "truncated": self.truncated,
            "dropped_sentences": self.dropped_sentences,
        })
    }
}

/// Template wording + options + length budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompter {
    pub templates: TemplateSet,
    pub options: RenderOptions,
    pub max_len: usize,
}

impl Prompter {
    pub fn new(max_len: usize) -> Self {
        Self {
            templates: TemplateSet::default(),
            options: RenderOptions::default(),
            max_len,
        }
    }

    pub fn answer_text(&self, example: &TripletExample) -> String {
        match self.options.answer_target {
            AnswerTarget::Joined => example.answers.join(", "),
            AnswerTarget::First => example.answers[0].clone(),
        }
    }

    pub fn render(&self, task: Task, example: &TripletExample, tok: &dyn Tokenizer) -> Result<RenderedInstance> {
        let evidence = example.evidence_text();
        let answer = self.answer_text(example);
        let fields = Fields {
            document: example.document.sentences(),
            question: &example.question,
            evidence: &evidence,
            answer: &answer,
        };
        // every task either conditions on or targets the answer
        if example.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(render_err(example, task, "empty answer string"));
        }
        if matches!(task, Task::Eaq) && evidence.is_empty() {
            return Err(render_err(example, task, "question restoration requires evidence"));
        }
        self.render_fields(task, &example.id, &fields, tok)
    }

    /// Renders arbitrary slot contents. Conditioning slots may be empty; the
    /// target may not.
    pub fn render_fields(
        &self,
        task: Task,
        id: &str,
        fields: &Fields<'_>,
        tok: &dyn Tokenizer,
    ) -> Result<RenderedInstance> {
        self.render_inner(task, id, fields, tok, false)
    }

    /// Inference-time rendering where the target is unknown: the target slot
    /// text is ignored and only the EOS is placed after the target label, so
    /// [`RenderedInstance::prompt_ids`] is the generation prompt.
    pub fn render_prompt(
        &self,
        task: Task,
        id: &str,
        fields: &Fields<'_>,
        tok: &dyn Tokenizer,
    ) -> Result<RenderedInstance> {
        self.render_inner(task, id, fields, tok, true)
    }

    fn render_inner(
        &self,
        task: Task,
        id: &str,
        fields: &Fields<'_>,
        tok: &dyn Tokenizer,
        prompt_only: bool,
    ) -> Result<RenderedInstance> {
        let fail = |reason: String| Error::Render {
            id: id.to_string(),
            task: task.to_string(),
            reason,
        };
        let target = task.target();
        let target_ids = if prompt_only {
            Vec::new()
        } else {
            tok.encode(fields.text(target))
        };
        if target_ids.is_empty() && !prompt_only {
            return Err(fail(format!("empty {target:?} target")));
        }
        let include_document = match task {
            Task::Eaq => self.options.eaq_include_document,
            _ => !self.options.omit_document,
        };
        let slots = task.conditioning(include_document);
        let sentence_ids: Vec<Vec<u32>> = if include_document {
            fields.document.iter().map(|s| tok.encode(s)).collect()
        } else {
            Vec::new()
        };

        let mut fixed: Vec<(Segment, Vec<u32>)> = vec![
            (Segment::Bos, vec![tok.bos()]),
            (Segment::Instruction, tok.encode(self.templates.instruction(task))),
        ];
        for &slot in &slots {
            fixed.push((Segment::label(slot), tok.encode(self.templates.label(slot))));
            let content = if slot == Slot::Document {
                Vec::new()
            } else {
                tok.encode(fields.text(slot))
            };
            fixed.push((Segment::content(slot), content));
        }
        fixed.push((Segment::label(target), tok.encode(self.templates.label(target))));
        let mut target_with_eos = target_ids;
        target_with_eos.push(tok.eos());
        fixed.push((Segment::content(target), target_with_eos));

        let fixed_len: usize = fixed.iter().map(|(_, ids)| ids.len()).sum();
        let mut keep = sentence_ids.len();
        let mut doc_len: usize = sentence_ids.iter().map(Vec::len).sum();
        while fixed_len + doc_len > self.max_len {
            if keep == 0 {
                return Err(fail(format!(
                    "{} tokens exceed max_len {} without any document",
                    fixed_len, self.max_len
                )));
            }
            keep -= 1;
            doc_len -= sentence_ids[keep].len();
        }

        let mut token_ids = Vec::with_capacity(fixed_len + doc_len);
        let mut segments = BTreeMap::new();
        for (seg, ids) in fixed {
            let start = token_ids.len();
            if seg == Segment::Document {
                sentence_ids[..keep].iter().for_each(|s| token_ids.extend_from_slice(s));
            } else {
                token_ids.extend_from_slice(&ids);
            }
            segments.insert(seg, start..token_ids.len());
        }
        let target_range = segments[&Segment::content(target)].clone();
        let loss_mask = (0..token_ids.len()).map(|i| target_range.contains(&i)).collect();
        Ok(RenderedInstance {
            example_id: id.to_string(),
            task,
            token_ids,
            loss_mask,
            segments,
            truncated: keep < sentence_ids.len(),
            dropped_sentences: sentence_ids.len() - keep,
        })
    }

    /// Evidence-conditioned and evidence-absent answer renderings whose
    /// answer targets are token-identical.
    pub fn bridging_pair(
        &self,
        example: &TripletExample,
        tok: &dyn Tokenizer,
    ) -> Result<(RenderedInstance, RenderedInstance)> {
        let with_evidence = self.render(Task::Qea, example, tok)?;
        let plain = self.render(Task::QaPlain, example, tok)?;
        if with_evidence.target_ids() != plain.target_ids() {
            return Err(render_err(
                example,
                Task::Qea,
                "answer targets differ between bridging prompts",
            ));
        }
        Ok((with_evidence, plain))
    }
}

fn render_err(example: &TripletExample, task: Task, reason: &str) -> Error {
    Error::Render {
        id: example.id.clone(),
        task: task.to_string(),
        reason: reason.to_string(),
    }
}

/// Renders with the default templates and options.
pub fn render(task: Task, example: &TripletExample, tok: &dyn Tokenizer, max_len: usize) -> Result<RenderedInstance> {
    Prompter::new(max_len).render(task, example, tok)
}

/// Default-template bridging pair: `(QEA, QA_PLAIN)`.
pub fn build_pair_for_bridging(
    example: &TripletExample,
    tok: &dyn Tokenizer,
    max_len: usize,
) -> Result<(RenderedInstance, RenderedInstance)> {
    Prompter::new(max_len).bridging_pair(example, tok)
}

/// Vocabulary covering a corpus plus template wording.
pub fn build_tokenizer<'a>(
    corpus: impl IntoIterator<Item = &'a TripletExample>,
    templates: &TemplateSet,
) -> WordTokenizer {
    let mut texts: Vec<String> = templates.texts().into_iter().map(str::to_string).collect();
    texts.push("unanswerable yes no".into());
    for ex in corpus {
        texts.extend(ex.document.sentences().iter().cloned());
        texts.push(ex.question.clone());
        texts.extend(ex.answers.iter().cloned());
    }
    WordTokenizer::build(texts.iter().map(String::as_str))
}
