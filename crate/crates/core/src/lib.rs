//! Evidence-enhanced triplet generation for document-grounded generative QA.
//!
//! A single backbone is trained on three flipped tasks over each
//! ⟨question, evidence, answer⟩ triple:
//!
//! * question + answer → evidence ([`Task::Qae`])
//! * question + evidence → answer ([`Task::Qea`]), plus a KL term pulling the
//!   evidence-free answer distribution ([`Task::QaPlain`]) towards it
//! * evidence + answer → question ([`Task::Eaq`])
//!
//! At inference answers come straight from the evidence-free prompt.

pub mod analysis;
pub mod backbone;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod objectives;
pub mod prompting;
pub mod trainer;

pub use backbone::{AdaptationMode, BackboneConfig, Checkpoint, LanguageModel, Transformer};
pub use corpus::{AnswerType, Document, TripletExample};
pub use error::{Error, Result};
pub use evaluator::{evaluate, EvalOptions, EvalReport, EvalTasks, ExampleRecord, Prediction};
pub use objectives::{LossBreakdown, LossWeights};
pub use prompting::{Prompter, RenderedInstance, Task, Tokenizer, WordTokenizer};
pub use trainer::{Ablation, ModelBundle, TrainConfig, TrainState, Trainer};
