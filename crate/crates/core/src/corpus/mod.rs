//! Dataset ingestion, annotation aggregation, confidence-ordered splits and
//! synthetic corpora.

mod annotate;
mod formats;
mod synthetic;

pub use annotate::{
    aggregate, aggregate_annotations, load_accuracies, load_votes, qualify, AnnotatedSentence,
    AnnotationSet, Vote, QUALIFICATION_THRESHOLD,
};
pub use formats::{load_jsonl, load_rct, parse_jsonl, parse_rct, save_jsonl, to_jsonl};
pub use synthetic::{gen_summarization, gen_synthetic, planted_indices, SummarizationSpec, CUES};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seqpack::{Document, PackError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("aggregation: {0}")]
    Aggregation(String),
    #[error("split: {0}")]
    Split(String),
    #[error(transparent)]
    Document(#[from] PackError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered, unique label names. A label's id is its position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, CorpusError> {
        let mut set = Self::default();
        for n in names {
            let n = n.into();
            if set.id(&n).is_some() {
                return Err(CorpusError::DuplicateLabel(n));
            }
            set.names.push(n);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    fn intern(&mut self, name: &str) -> usize {
        self.id(name).unwrap_or_else(|| {
            self.names.push(name.to_string());
            self.names.len() - 1
        })
    }

    /// Id of `name`, adding it when `grow` is set.
    fn resolve(&mut self, name: &str, grow: bool) -> Result<usize, CorpusError> {
        if grow {
            Ok(self.intern(name))
        } else {
            self.id(name).ok_or_else(|| CorpusError::UnknownLabel(name.to_string()))
        }
    }

    /// One name per line.
    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        Self::new(text.lines().filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Documents together with the label set their label ids refer to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub labels: LabelSet,
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn num_sentences(&self) -> usize {
        self.docs.iter().map(Document::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

/// Fractions of train, dev and test.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.75, 0.15, 0.10);

/// Puts the most confident documents in test, then shuffles the rest with
/// `seed` into dev and train. Test and dev sizes are floored; train takes
/// the remainder.
pub fn split_by_confidence(
    docs: Vec<Document>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    let (tr, dv, te) = fractions;
    if [tr, dv, te].iter().any(|f| !(0.0..=1.0).contains(f)) || (tr + dv + te - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Split(format!("fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut keyed = Vec::with_capacity(docs.len());
    for d in docs {
        let c = d
            .confidence
            .ok_or_else(|| CorpusError::Split(format!("document {} has no confidence", d.doc_id)))?;
        keyed.push((c, d));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n = keyed.len() as f64;
    let n_test = (n * te + 1e-9).floor() as usize;
    let n_dev = (n * dv + 1e-9).floor() as usize;

    let mut rest: Vec<Document> = keyed.into_iter().map(|(_, d)| d).collect();
    let test = rest.drain(..n_test).collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dev = rest.drain(..n_dev).collect();
    Ok(CorpusSplit { train: rest, dev, test })
}
