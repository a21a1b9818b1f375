use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::args::*;
use super::{CliError, RunManifest};
use crate::checkpoint::{init_model, Checkpoint, CheckpointConfig};
use crate::corpus::{
    aggregate_annotations, gen_summarization, gen_synthetic, load_accuracies, load_jsonl, load_rct, load_votes,
    save_jsonl, split_by_confidence, AnnotationSet, Corpus, LabelSet, SummarizationSpec,
};
use crate::encoder::{EncoderConfig, Graph};
use crate::metrics::select_top_k;
use crate::model::{prepare, ModelKind, ModelSpec, Prediction, Task};
use crate::seqpack::{pack, Document, PackOptions, Vocab};
use crate::tensor::Tape;
use crate::trainer::{self, evaluate, EvalReport, SeedRun, Splits, TrainConfig};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Vocab(a) => vocab(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Summarize(a) => summarize(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Attn(a) => attn(a),
        Command::Gen(a) => gen(a),
    }
}

/// JSON lines for `.jsonl` and `.json` files, tab-separated abstracts
/// otherwise.
fn load_corpus(path: &Path, labels: Option<&LabelSet>) -> Result<Corpus, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("{}: no such file", path.display())));
    }
    let jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    Ok(if jsonl {
        load_jsonl(path, labels)?
    } else {
        load_rct(path, labels)?
    })
}

fn write_file(path: &Path, content: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

/// `<file>.manifest.json` next to a single-file output.
fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn inputs(manifest: &mut RunManifest, files: &[(&str, &Path)]) -> Result<(), CliError> {
    for (role, path) in files {
        manifest.input(role, path)?;
    }
    Ok(())
}

fn vocab(a: VocabArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("vocab", &a, vec![]);
    for p in &a.data {
        m.input("data", p)?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(&sibling_manifest(&a.out), m.to_json())?;
    let mut docs = Vec::new();
    for p in &a.data {
        docs.extend(load_corpus(p, None)?.docs);
    }
    let v = Vocab::build(&docs, a.max_size)?;
    v.save(&a.out)?;
    eprintln!("{} tokens written to {}", v.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainMetrics<'a> {
    task: Task,
    model: ModelKind,
    lr: f64,
    best_seed: u64,
    /// Mean over seeds for classification, the best run's for summarization.
    test_metric: f64,
    runs: &'a [SeedRun],
}

fn check_supervision(task: Task, docs: &[Document], path: &Path) -> Result<(), CliError> {
    let missing = docs.iter().find(|d| match task {
        Task::Classify => d.labels.is_none(),
        Task::Summarize => d.scores.is_none(),
    });
    match missing {
        Some(d) => Err(CliError::Data(format!(
            "{}: document {} has no {}",
            path.display(),
            d.doc_id,
            if task == Task::Classify { "labels" } else { "scores" }
        ))),
        None => Ok(()),
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    if a.model == ModelKind::ClsCrf && a.task == Task::Summarize {
        return Err(CliError::Usage("--model cls-crf does not support --task summarize".into()));
    }
    if a.abstract_rouge && a.task == Task::Classify {
        return Err(CliError::Usage("--abstract-rouge requires --task summarize".into()));
    }
    let config = TrainConfig {
        learning_rates: a.lr.clone(),
        epochs: a.epochs,
        micro_batch: a.micro_batch,
        effective_batch: a.effective_batch,
        seeds: a.seeds.clone(),
    };
    config.validate()?;

    let mut m = RunManifest::new("train", &a, a.seeds.clone());
    inputs(&mut m, &[("train", &a.train), ("dev", &a.dev), ("test", &a.test)])?;
    if let Some(v) = &a.vocab {
        m.input("vocab", v)?;
    }
    create_dir(&a.out)?;
    write_file(&a.out.join("run_manifest.json"), m.to_json())?;

    let train = load_corpus(&a.train, None)?;
    let labels = train.labels.clone();
    let dev = load_corpus(&a.dev, Some(&labels))?;
    let test = load_corpus(&a.test, Some(&labels))?;
    for (docs, path) in [(&train.docs, &a.train), (&dev.docs, &a.dev), (&test.docs, &a.test)] {
        check_supervision(a.task, docs, path)?;
    }
    let vocab = match &a.vocab {
        Some(p) => Vocab::load(p)?,
        None => Vocab::build(&train.docs, a.vocab_size)?,
    };
    let num_labels = match a.task {
        Task::Classify => labels.len(),
        Task::Summarize => 0,
    };
    let spec = ModelSpec {
        kind: a.model,
        task: a.task,
        encoder: EncoderConfig {
            num_layers: a.layers,
            num_heads: a.heads,
            hidden_dim: a.hidden,
            ff_dim: a.ff,
            vocab_size: vocab.len(),
            max_positions: a.max_positions,
            dropout: a.dropout,
        },
        num_labels,
        abstract_rouge: a.abstract_rouge,
        context_layer: !a.no_context,
        threshold: a.threshold,
        baseline_split: a.baseline_split,
        marker: a.marker,
    };
    if a.task == Task::Classify && num_labels < 2 {
        return Err(CliError::Data(format!(
            "{}: classification needs at least 2 labels, found {num_labels}",
            a.train.display()
        )));
    }
    spec.validate()?;

    let log_path = a.out.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| CliError::Data(format!("{}: {e}", log_path.display())))?;
    let mut log_err = None;
    let outcome = trainer::train(
        &spec,
        &vocab,
        Splits {
            train: &train.docs,
            dev: &dev.docs,
            test: &test.docs,
        },
        &config,
        &mut |entry| {
            let line = serde_json::to_string(entry).expect("log entry serializes");
            println!("{line}");
            if let Err(e) = writeln!(log_file, "{line}") {
                log_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(CliError::Data(format!("{}: {e}", log_path.display())));
    }

    let checkpoint = Checkpoint {
        config: CheckpointConfig {
            spec,
            seed: outcome.best_seed,
        },
        model: outcome.model,
        store: outcome.store,
        vocab,
        labels: (a.task == Task::Classify).then_some(labels),
    };
    checkpoint.save(&a.out.join("checkpoint"))?;
    let metrics = TrainMetrics {
        task: a.task,
        model: a.model,
        lr: outcome.lr,
        best_seed: outcome.best_seed,
        test_metric: outcome.test_metric,
        runs: &outcome.runs,
    };
    write_file(&a.out.join("metrics.json"), to_json(&metrics))?;
    eprintln!("test metric {} (lr {})", outcome.test_metric, outcome.lr);
    Ok(())
}

/// Loads a checkpoint and the documents to run it on.
fn load_for_inference(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, Vec<Document>), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let corpus = load_corpus(data, ck.labels.as_ref())?;
    Ok((ck, corpus.docs))
}

#[derive(Debug, Serialize)]
struct PredictionRecord<'a> {
    doc_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<&'a str>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<Vec<usize>>,
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("eval", &a, vec![]);
    inputs(&mut m, &[("checkpoint", &a.checkpoint), ("data", &a.data)])?;
    match &a.out {
        Some(out) => write_file(&sibling_manifest(out), m.to_json())?,
        None => eprint!("{}", m.to_json()),
    }
    let (ck, docs) = load_for_inference(&a.checkpoint, &a.data)?;
    let examples = prepare(&ck.config.spec, &ck.vocab, &docs)?;
    let (report, preds): (EvalReport, _) = evaluate(&ck.model, &ck.store, &docs, &examples)?;
    let json = to_json(&report);
    print!("{json}");
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    if let Some(path) = &a.predictions {
        let mut text = String::new();
        for (doc, pred) in docs.iter().zip(&preds) {
            let record = match pred {
                Prediction::Labels(ls) => PredictionRecord {
                    doc_id: &doc.doc_id,
                    labels: Some(
                        ls.iter()
                            .map(|&l| ck.labels.as_ref().and_then(|s| s.name(l)).unwrap_or("?"))
                            .collect(),
                    ),
                    scores: None,
                    summary: None,
                },
                Prediction::Scores(s) => PredictionRecord {
                    doc_id: &doc.doc_id,
                    labels: None,
                    scores: Some(s),
                    summary: Some(select_top_k(s, trainer::TOP_K)),
                },
            };
            text.push_str(&serde_json::to_string(&record).expect("record serializes"));
            text.push('\n');
        }
        write_file(path, text)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryRecord<'a> {
    doc_id: &'a str,
    indices: Vec<usize>,
    sentences: Vec<&'a str>,
}

fn summarize(a: SummarizeArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("summarize", &a, vec![]);
    inputs(&mut m, &[("checkpoint", &a.checkpoint), ("data", &a.data)])?;
    write_file(&sibling_manifest(&a.out), m.to_json())?;
    let (ck, docs) = load_for_inference(&a.checkpoint, &a.data)?;
    if ck.config.spec.task != Task::Summarize {
        return Err(CliError::Usage(format!(
            "{} is a classification checkpoint",
            a.checkpoint.display()
        )));
    }
    let examples = prepare(&ck.config.spec, &ck.vocab, &docs)?;
    let preds = ck.model.predict_documents(&ck.store, &examples, docs.len())?;
    let mut text = String::new();
    for (doc, pred) in docs.iter().zip(&preds) {
        let Prediction::Scores(s) = pred else {
            unreachable!("summarization predicts scores")
        };
        let indices = select_top_k(s, a.top_k);
        let record = SummaryRecord {
            doc_id: &doc.doc_id,
            sentences: indices.iter().map(|&i| doc.sentences[i].as_str()).collect(),
            indices,
        };
        text.push_str(&serde_json::to_string(&record).expect("record serializes"));
        text.push('\n');
    }
    write_file(&a.out, text)
}

fn aggregate(a: AggregateArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("aggregate", &a, vec![a.seed]);
    inputs(&mut m, &[("votes", &a.votes), ("accuracies", &a.accuracies)])?;
    create_dir(&a.out)?;
    write_file(&a.out.join("run_manifest.json"), m.to_json())?;
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Usage(format!("threshold {} outside [0, 1]", a.threshold)));
    }
    let (labels, sentences) = load_votes(&a.votes, None)?;
    let accuracies = load_accuracies(&a.accuracies)?;
    let set = AnnotationSet {
        labels,
        sentences,
        accuracies,
    };
    let docs = aggregate_annotations(&set, a.threshold)?;
    let fractions = (a.fractions[0], a.fractions[1], a.fractions[2]);
    let split = split_by_confidence(docs, fractions, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    for (name, docs) in [("train", &split.train), ("dev", &split.dev), ("test", &split.test)] {
        save_jsonl(&a.out.join(format!("{name}.jsonl")), docs, &set.labels)?;
    }
    set.labels.save(&a.out.join("labels.txt"))?;
    eprintln!(
        "{} train, {} dev, {} test documents",
        split.train.len(),
        split.dev.len(),
        split.test.len()
    );
    Ok(())
}

fn attn(a: AttnArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("attn", &a, vec![]);
    inputs(&mut m, &[("checkpoint", &a.checkpoint), ("data", &a.data)])?;
    create_dir(&a.out)?;
    write_file(&a.out.join("run_manifest.json"), m.to_json())?;

    let ck = Checkpoint::load(&a.checkpoint)?;
    let spec = &ck.config.spec;
    let num_layers = spec.encoder.num_layers;
    let layers: Vec<usize> = match a.layer {
        Some(l) if l >= num_layers => {
            return Err(CliError::Usage(format!("--layer {l} out of range for {num_layers} layers")))
        }
        Some(l) => vec![l],
        None => (0..num_layers).collect(),
    };
    let docs = load_corpus(&a.data, None)?.docs;
    let doc = match &a.doc {
        Some(id) => docs
            .iter()
            .find(|d| &d.doc_id == id)
            .ok_or_else(|| CliError::Data(format!("{}: no document {id}", a.data.display())))?,
        None => docs
            .first()
            .ok_or_else(|| CliError::Data(format!("{}: no documents", a.data.display())))?,
    };
    let opts = PackOptions {
        max_tokens: usize::MAX,
        marker: spec.marker,
    };
    let packed = pack(doc, 0..doc.len(), &ck.vocab, &opts)?;
    if packed.len() > spec.encoder.max_positions {
        return Err(CliError::Data(format!(
            "document {} has {} tokens, the model supports {}",
            doc.doc_id,
            packed.len(),
            spec.encoder.max_positions
        )));
    }

    let (model, store) = if a.untrained {
        init_model(spec, ck.config.seed)?
    } else {
        (ck.model.clone(), ck.store.clone())
    };
    let mut tape = Tape::new();
    let mut g = Graph::eval(&mut tape, &store);
    let (_, trace) = model
        .encoder
        .encode(&mut g, &packed.token_ids, &packed.attention_mask, true)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let trace = trace.expect("trace requested");

    let tokens: Vec<&str> = packed
        .token_ids
        .iter()
        .map(|&id| ck.vocab.token(id).unwrap_or("[UNK]"))
        .collect();
    for l in layers {
        let weights = trace.max_over_heads(l).map_err(|e| CliError::Usage(e.to_string()))?;
        let path = a.out.join(format!("layer{l}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
        let mut header = vec![""];
        header.extend(&tokens);
        w.write_record(&header).map_err(csv_err)?;
        for (i, tok) in tokens.iter().enumerate() {
            let mut row = vec![tok.to_string()];
            row.extend(weights.row(i).iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let m = RunManifest::new("gen", &a, vec![a.seed]);
    create_dir(&a.out)?;
    write_file(&a.out.join("run_manifest.json"), m.to_json())?;
    let total = a.train_docs + a.dev_docs + a.test_docs;
    let corpus = match a.kind {
        GenKind::Context => gen_synthetic(a.seed, total, a.sentences.unwrap_or(6))?,
        GenKind::Summarize => gen_summarization(
            a.seed,
            SummarizationSpec {
                n_docs: total,
                sentences_per_doc: a.sentences.unwrap_or(24),
                highlights_per_doc: a.highlights,
            },
        )?,
    };
    let mut docs = corpus.docs;
    let test = docs.split_off(a.train_docs + a.dev_docs);
    let dev = docs.split_off(a.train_docs);
    for (name, part) in [("train", &docs), ("dev", &dev), ("test", &test)] {
        save_jsonl(&a.out.join(format!("{name}.jsonl")), part, &corpus.labels)?;
    }
    if !corpus.labels.is_empty() {
        corpus.labels.save(&a.out.join("labels.txt"))?;
    }
    Ok(())
}
