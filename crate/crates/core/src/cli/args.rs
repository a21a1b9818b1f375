use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::model::{ModelKind, Task};
use crate::seqpack::Marker;

#[derive(Debug, Parser)]
#[command(name = "ssc", version, about = "Sequential sentence classification and extractive summarization")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Plain-text `key=value` file of flag values; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary from training data.
    Vocab(VocabArgs),
    /// Train a model, sweeping learning rates and seeds.
    Train(TrainArgs),
    /// Score a checkpoint on labeled data.
    Eval(EvalArgs),
    /// Extract the top sentences of each document.
    Summarize(SummarizeArgs),
    /// Turn crowd votes into a confidence-split corpus.
    Aggregate(AggregateArgs),
    /// Export attention matrices of one document.
    Attn(AttnArgs),
    /// Generate a synthetic corpus.
    Gen(GenArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Vocab(_) => "vocab",
            Self::Train(_) => "train",
            Self::Eval(_) => "eval",
            Self::Summarize(_) => "summarize",
            Self::Aggregate(_) => "aggregate",
            Self::Attn(_) => "attn",
            Self::Gen(_) => "gen",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VocabArgs {
    /// Corpus files: `.jsonl`, or tab-separated abstracts otherwise.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum vocabulary size, special tokens included.
    #[arg(long, default_value_t = 30000)]
    pub max_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Vocabulary file; built from the training data when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 30000)]
    pub vocab_size: usize,
    /// Output directory for the checkpoint, metrics and logs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Task::Classify)]
    pub task: Task,
    #[arg(long, value_enum, default_value_t = ModelKind::Joint)]
    pub model: ModelKind,
    /// Learning rates to try, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5e-6,1e-5,2e-5,5e-5")]
    pub lr: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Maximum sentences per split of the joint model.
    #[arg(long, default_value_t = 10)]
    pub threshold: usize,
    /// Maximum sentences per split of the baselines.
    #[arg(long, default_value_t = 30)]
    pub baseline_split: usize,
    /// Append sentence-abstract ROUGE-L to each sentence vector.
    #[arg(long)]
    pub abstract_rouge: bool,
    /// Drop the Transformer layer over sentence vectors in the baselines.
    #[arg(long)]
    pub no_context: bool,
    #[arg(long, value_enum, default_value_t = Marker::Sep)]
    pub marker: Marker,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 64)]
    pub ff: usize,
    #[arg(long, default_value_t = 512)]
    pub max_positions: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 8)]
    pub micro_batch: usize,
    #[arg(long, default_value_t = 32)]
    pub effective_batch: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics file; also printed to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-document predictions as JSON lines.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::trainer::TOP_K)]
    pub top_k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    /// CSV with header `doc_id,sentence,text,worker,label`.
    #[arg(long)]
    pub votes: PathBuf,
    /// CSV with header `worker,accuracy`.
    #[arg(long)]
    pub accuracies: PathBuf,
    /// Output directory for `train.jsonl`, `dev.jsonl`, `test.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::corpus::QUALIFICATION_THRESHOLD)]
    pub threshold: f64,
    /// Train, dev and test fractions, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.75,0.15,0.10")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct AttnArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Document id; the first document when absent.
    #[arg(long)]
    pub doc: Option<String>,
    /// Export one layer.
    #[arg(long, conflicts_with = "all")]
    pub layer: Option<usize>,
    /// Export every layer (the default).
    #[arg(long)]
    pub all: bool,
    /// Use the checkpoint's initial parameters instead of the trained ones.
    #[arg(long)]
    pub untrained: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    /// Labels that depend on the previous sentence.
    Context,
    /// Planted highlight sentences with ROUGE-L targets.
    Summarize,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value_t = GenKind::Context)]
    pub kind: GenKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub train_docs: usize,
    #[arg(long, default_value_t = 200)]
    pub dev_docs: usize,
    #[arg(long, default_value_t = 500)]
    pub test_docs: usize,
    /// Sentences per document; 6 for context, 24 for summarize when absent.
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub highlights: usize,
}
