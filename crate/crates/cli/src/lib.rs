//! `tripletqa` command-line entry point.
//!
//! Every subcommand writes exactly one `<command>.manifest.json` next to its
//! outputs. Failures print a one-line JSON object with an error category on
//! stderr; exit code 2 means a usage problem and 3 an I/O problem.

pub mod commands;
pub mod layered;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming an optional cache directory for converted corpora.
pub const CACHE_ENV: &str = "TRIPLETQA_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "tripletqa",
    version,
    about = "Evidence-enhanced triplet generation for document QA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a MultiRC or QASPER file into canonical JSONL.
    PrepareData(PrepareArgs),
    /// Train the backbone on the joint triplet objective.
    Train(TrainArgs),
    /// Generate and score answers, evidence and questions.
    Evaluate(EvaluateArgs),
    /// Grouping, correlation, hallucination and attention analyses.
    Analyze(AnalyzeArgs),
    /// Generate text for one task without scoring.
    Generate(GenerateArgs),
    /// Enumerate loss-weight configurations over a grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Multirc,
    Qasper,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, value_enum)]
    pub format: Format,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// MultiRC: one joined reference per question instead of one per correct option.
    #[arg(long)]
    pub join_answers: bool,
    /// Keep a stratified subsample of this many examples.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Selection split for the best checkpoint; the training data is used when absent.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override one configuration key, e.g. `--set optim.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ablation: Option<String>,
    /// Start from the weights and vocabulary of an existing checkpoint.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Continue an interrupted run from its last checkpoint.
    #[arg(long, conflicts_with = "init")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Also write `last.ckpt` every N steps.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated subset of qa,evidence,qea,question.
    #[arg(long, default_value = "qa")]
    pub tasks: String,
    /// Answer from generated evidence instead of the evidence-free prompt.
    #[arg(long)]
    pub with_evidence: bool,
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Groups,
    Correlation,
    Hallucination,
    Attention,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub kind: AnalysisKind,
    /// Evaluation report (groups, correlation).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Checkpoint (hallucination, attention).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus (hallucination, attention).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Grouping key: doc_length or sentence_count.
    #[arg(long, default_value = "doc_length")]
    pub key: String,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenerateTask {
    /// Answer from question and document.
    Qa,
    /// Answer from question alone.
    QaNoDocument,
    /// Evidence from question and gold answer.
    Evidence,
    /// Answer from question and gold evidence.
    Qea,
    /// Question from gold evidence and answer.
    Question,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "qa")]
    pub task: GenerateTask,
    /// Only generate for these example ids.
    #[arg(long = "id")]
    pub ids: Vec<String>,
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated values for every weight, or a TOML grid file.
    #[arg(long)]
    pub grid: String,
    /// Base configuration the grid is applied to.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Error class used for the exit code and the stderr report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Io,
    Other(&'static str),
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Io => "io",
            Category::Other(n) => n,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Io => 3,
            Category::Other(_) => 1,
        }
    }
}

/// Marks an error as a usage problem.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn categorize(err: &anyhow::Error) -> Category {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return Category::Usage;
        }
        if let Some(e) = cause.downcast_ref::<tripletqa::Error>() {
            return match e.category() {
                "io" => Category::Io,
                "config" | "input" => Category::Usage,
                other => Category::Other(other),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Category::Io;
        }
    }
    Category::Other("internal")
}

pub fn execute(cli: Cli, argv: &[String]) -> anyhow::Result<()> {
    match cli.command {
        Command::PrepareData(a) => commands::prepare::run(a, argv),
        Command::Train(a) => commands::train::run(a, argv),
        Command::Evaluate(a) => commands::evaluate::run(a, argv),
        Command::Analyze(a) => commands::analyze::run(a, argv),
        Command::Generate(a) => commands::generate::run(a, argv),
        Command::Sweep(a) => commands::sweep::run(a, argv),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, &argv) {
        Ok(()) => 0,
        Err(err) => {
            let category = categorize(&err);
            let report = serde_json::json!({
                "error": {"category": category.name(), "message": format!("{err:#}")}
            });
            eprintln!("{report}");
            category.exit_code()
        }
    }
}
