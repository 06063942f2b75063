use anyhow::Result;
use tripletqa::evaluator::normalize;
use tripletqa::evaluator::{generate_text, write_predictions, Prediction};
use tripletqa::prompting::Fields;
use tripletqa::{ModelBundle, Task};

use super::load_corpus;
use crate::manifest::RunManifest;
use crate::{GenerateArgs, GenerateTask, UsageError};

pub fn run(args: GenerateArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::start("generate", argv);
    let bundle = ModelBundle::load(&args.checkpoint)?;
    manifest.input(&args.checkpoint)?;
    let corpus = load_corpus(&args.data)?;
    manifest.input(&args.data)?;
    manifest.config_hash = Some(bundle.config.hash());

    let selected: Vec<_> = corpus
        .iter()
        .filter(|ex| args.ids.is_empty() || args.ids.contains(&ex.id))
        .collect();
    if selected.is_empty() {
        return Err(UsageError("no examples match the requested ids".into()).into());
    }
    let mut prompter = bundle.prompter.clone();
    let task = match args.task {
        GenerateTask::Qa => Task::QaPlain,
        GenerateTask::QaNoDocument => {
            prompter.options.omit_document = true;
            Task::QaPlain
        }
        GenerateTask::Evidence => Task::Qae,
        GenerateTask::Qea => Task::Qea,
        GenerateTask::Question => Task::Eaq,
    };

    let mut predictions = Vec::with_capacity(selected.len());
    for ex in selected {
        let evidence = ex.evidence_text();
        let answer = prompter.answer_text(ex);
        let fields = Fields {
            document: ex.document.sentences(),
            question: &ex.question,
            evidence: &evidence,
            answer: &answer,
        };
        let inst = prompter.render_prompt(task, &ex.id, &fields, &bundle.tokenizer)?;
        let text = generate_text(&bundle.model, &bundle.tokenizer, &inst, args.max_new_tokens)?;
        println!("{}\t{}", ex.id, text);
        predictions.push(Prediction {
            id: ex.id.clone(),
            task,
            normalized: normalize(&text),
            text,
        });
    }
    write_predictions(&args.out, &predictions)?;
    manifest.output(&args.out)?;
    let mut name = args.out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    manifest.finish(&args.out.with_file_name(name))
}
