use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four instruction-tuned tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    /// question + answer → evidence
    #[serde(rename = "qae")]
    Qae,
    /// question + evidence → answer
    #[serde(rename = "qea")]
    Qea,
    /// evidence + answer → question
    #[serde(rename = "eaq")]
    Eaq,
    /// question → answer, no evidence block
    #[serde(rename = "qa_plain")]
    QaPlain,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Qae, Task::Qea, Task::Eaq, Task::QaPlain];

    pub fn name(self) -> &'static str {
        match self {
            Task::Qae => "qae",
            Task::Qea => "qea",
            Task::Eaq => "eaq",
            Task::QaPlain => "qa_plain",
        }
    }

    pub fn target(self) -> Slot {
        match self {
            Task::Qae => Slot::Evidence,
            Task::Qea | Task::QaPlain => Slot::Answer,
            Task::Eaq => Slot::Question,
        }
    }

    /// Conditioning slots in prompt order; the target slot always comes last.
    pub fn conditioning(self, include_document: bool) -> Vec<Slot> {
        let base: &[Slot] = match self {
            Task::Qae => &[Slot::Document, Slot::Question, Slot::Answer],
            Task::Qea => &[Slot::Document, Slot::Question, Slot::Evidence],
            Task::Eaq => &[Slot::Document, Slot::Evidence, Slot::Answer],
            Task::QaPlain => &[Slot::Document, Slot::Question],
        };
        base.iter()
            .copied()
            .filter(|s| include_document || *s != Slot::Document)
            .collect()
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Document,
    Question,
    Evidence,
    Answer,
}

/// Instruction wording and slot labels. Loadable from TOML so ablations can
/// swap wording without rebuilding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSet {
    pub qae: String,
    pub qea: String,
    pub eaq: String,
    pub qa_plain: String,
    pub document_label: String,
    pub question_label: String,
    pub evidence_label: String,
    pub answer_label: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            qae: "generate the relevant evidence from the document to answer the following question"
                .into(),
            qea: "generate the correct answers for the following question based on the document and the evidence support the answers to the question."
                .into(),
            eaq: "reconstruct the question based on the answers and corresponding supporting evidence"
                .into(),
            qa_plain: "generate the correct answers for the following question based on the document."
                .into(),
            document_label: "[Document]".into(),
            question_label: "[Question]".into(),
            evidence_label: "[Evidence]".into(),
            answer_label: "[Answer]".into(),
        }
    }
}

impl TemplateSet {
    pub fn instruction(&self, task: Task) -> &str {
        match task {
            Task::Qae => &self.qae,
            Task::Qea => &self.qea,
            Task::Eaq => &self.eaq,
            Task::QaPlain => &self.qa_plain,
        }
    }

    pub fn label(&self, slot: Slot) -> &str {
        match slot {
            Slot::Document => &self.document_label,
            Slot::Question => &self.question_label,
            Slot::Evidence => &self.evidence_label,
            Slot::Answer => &self.answer_label,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&raw).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("templates serialize")
    }

    /// All template text, for vocabulary building.
    pub fn texts(&self) -> Vec<&str> {
        vec![
            &self.qae,
            &self.qea,
            &self.eaq,
            &self.qa_plain,
            &self.document_label,
            &self.question_label,
            &self.evidence_label,
            &self.answer_label,
        ]
        .into_iter()
        .map(String::as_str)
        .collect()
    }
}
