//! Complete sentence models: encoder plus head, and the conversion of
//! documents into per-split training examples.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::{self, CrfError};
use crate::encoder::{Encoder, EncoderConfig, EncoderError, Graph};
use crate::heads::{classify_joint, score_regression, ClsBaseline, CrfLayer, HeadError, SepHead};
use crate::metrics::{abstract_rouge, MetricError};
use crate::seqpack::{bisect_split, pack, unpack, Document, Marker, PackError, PackOptions, PackedInput, Vocab};
use crate::tensor::{ParamStore, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("document {doc_id}: {msg}")]
    Data { doc_id: String, msg: String },
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelError {
    /// Whether a forward or backward pass produced NaN or infinity.
    pub fn is_non_finite(&self) -> bool {
        let tensor = |e: &TensorError| matches!(e, TensorError::NonFinite { .. });
        let encoder = |e: &EncoderError| matches!(e, EncoderError::Tensor(t) if tensor(t));
        let crf = |e: &CrfError| matches!(e, CrfError::Tensor(t) if tensor(t));
        match self {
            Self::Tensor(t) => tensor(t),
            Self::Encoder(e) => encoder(e),
            Self::Crf(c) => crf(c),
            Self::Head(HeadError::Tensor(t)) => tensor(t),
            Self::Head(HeadError::Encoder(e)) => encoder(e),
            Self::Head(HeadError::Crf(c)) => crf(c),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classify,
    Summarize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// All sentences of a split in one sequence, read at their delimiters.
    Joint,
    /// Sentences encoded alone and read at `[CLS]`.
    ClsBaseline,
    /// The `[CLS]` baseline with a CRF output layer.
    ClsCrf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub task: Task,
    pub encoder: EncoderConfig,
    /// Label count for classification; ignored for summarization.
    pub num_labels: usize,
    /// Append the abstract-similarity feature to each sentence vector.
    pub abstract_rouge: bool,
    /// Transformer layer over sentence vectors in the `[CLS]` baselines.
    pub context_layer: bool,
    /// Maximum sentences per joint split.
    pub threshold: usize,
    /// Maximum sentences per baseline split.
    pub baseline_split: usize,
    pub marker: Marker,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, task: Task, encoder: EncoderConfig, num_labels: usize) -> Self {
        Self {
            kind,
            task,
            encoder,
            num_labels,
            abstract_rouge: false,
            context_layer: true,
            threshold: 10,
            baseline_split: 30,
            marker: Marker::Sep,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        let fail = |m: &str| Err(ModelError::Spec(m.to_string()));
        if self.kind == ModelKind::ClsCrf && self.task == Task::Summarize {
            return fail("the CRF baseline only supports classification");
        }
        if self.task == Task::Classify && self.num_labels < 2 {
            return fail("classification needs at least 2 labels");
        }
        if self.task == Task::Classify && self.abstract_rouge {
            return fail("the abstract feature applies to summarization only");
        }
        if self.threshold == 0 || self.baseline_split == 0 {
            return fail("split sizes must be positive");
        }
        if self.kind != ModelKind::Joint && self.marker != Marker::Sep {
            return fail("the [CLS] baselines do not use delimiter markers");
        }
        Ok(())
    }

    fn out_dim(&self) -> usize {
        match self.task {
            Task::Classify => self.num_labels,
            Task::Summarize => 1,
        }
    }

    fn split_size(&self) -> usize {
        match self.kind {
            ModelKind::Joint => self.threshold,
            _ => self.baseline_split,
        }
    }
}

/// One split of one document, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Index of the source document.
    pub doc: usize,
    /// Sentences of the source document in this split.
    pub range: Range<usize>,
    /// One packed sequence for the joint model, one per sentence otherwise.
    pub inputs: Vec<PackedInput>,
    pub labels: Option<Vec<usize>>,
    pub targets: Option<Vec<f64>>,
    pub features: Option<Vec<f64>>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Splits and packs every document. Supervision is copied when present.
pub fn prepare(spec: &ModelSpec, vocab: &Vocab, docs: &[Document]) -> Result<Vec<Example>, ModelError> {
    let opts = PackOptions {
        max_tokens: spec.encoder.max_positions,
        marker: spec.marker,
    };
    let mut out = Vec::new();
    for (di, doc) in docs.iter().enumerate() {
        doc.validate()?;
        let data_err = |msg: String| ModelError::Data {
            doc_id: doc.doc_id.clone(),
            msg,
        };
        if let Some(labels) = &doc.labels {
            if let Some(&bad) = labels.iter().find(|&&l| l >= spec.num_labels) {
                return Err(data_err(format!("label id {bad} outside {} labels", spec.num_labels)));
            }
        }
        let features = if spec.abstract_rouge {
            let abs = doc
                .abstract_sentences
                .as_ref()
                .filter(|a| !a.is_empty())
                .ok_or_else(|| data_err("the abstract feature needs abstract sentences".into()))?;
            Some(
                doc.sentences
                    .iter()
                    .map(|s| abstract_rouge(s, abs))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        for range in bisect_split(doc.len(), spec.split_size()) {
            let inputs = match spec.kind {
                ModelKind::Joint => vec![pack(doc, range.clone(), vocab, &opts)?],
                _ => range
                    .clone()
                    .map(|i| pack(doc, i..i + 1, vocab, &opts))
                    .collect::<Result<_, _>>()?,
            };
            out.push(Example {
                doc: di,
                inputs,
                labels: doc.labels.as_ref().map(|l| l[range.clone()].to_vec()),
                targets: doc.scores.as_ref().map(|s| s[range.clone()].to_vec()),
                features: features.as_ref().map(|f| f[range.clone()].to_vec()),
                range,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Joint(SepHead),
    Cls(ClsBaseline),
    ClsCrf(ClsBaseline, CrfLayer),
}

/// Per-sentence outputs of one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Labels(Vec<usize>),
    Scores(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub encoder: Encoder,
    pub head: Head,
}

impl Model {
    /// Registers all parameters in `store` in a fixed order.
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, store: &mut ParamStore, rng: &mut R) -> Result<Self, ModelError> {
        spec.validate()?;
        let encoder = Encoder::new(&spec.encoder, store, rng)?;
        let cfg = &spec.encoder;
        let out = spec.out_dim();
        let baseline = |store: &mut ParamStore, rng: &mut R| {
            ClsBaseline::new(store, rng, cfg, out, spec.context_layer, spec.baseline_split, spec.abstract_rouge)
        };
        let head = match spec.kind {
            ModelKind::Joint => Head::Joint(SepHead::new(
                store,
                rng,
                "head",
                cfg.hidden_dim,
                out,
                spec.abstract_rouge,
                cfg.dropout,
            )?),
            ModelKind::ClsBaseline => Head::Cls(baseline(store, rng)?),
            ModelKind::ClsCrf => {
                let b = baseline(store, rng)?;
                Head::ClsCrf(b, CrfLayer::new(store, spec.num_labels)?)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            encoder,
            head,
        })
    }

    /// Logits `[n×L]` or scores `[n]`.
    pub fn output(&self, g: &mut Graph, ex: &Example) -> Result<Var, ModelError> {
        let features = ex.features.as_deref();
        match &self.head {
            Head::Joint(head) => {
                let p = &ex.inputs[0];
                let (h, _) = self.encoder.encode(g, &p.token_ids, &p.attention_mask, false)?;
                Ok(match self.spec.task {
                    Task::Classify => classify_joint(g, h, &p.marker_positions, head)?,
                    Task::Summarize => score_regression(g, h, &p.marker_positions, head, features)?,
                })
            }
            Head::Cls(b) | Head::ClsCrf(b, _) => {
                let out = b.forward(g, &self.encoder, &ex.inputs, features)?;
                Ok(match self.spec.task {
                    Task::Classify => out,
                    Task::Summarize => {
                        let s = g.tape.sigmoid(out)?;
                        g.tape.reshape(s, &[ex.len()])?
                    }
                })
            }
        }
    }

    /// Mean cross-entropy, CRF negative log-likelihood per sentence, or
    /// mean squared error, depending on head and task.
    pub fn loss(&self, g: &mut Graph, ex: &Example) -> Result<Var, ModelError> {
        let out = self.output(g, ex)?;
        let missing = |what: &str| ModelError::Spec(format!("training example without {what}"));
        match self.spec.task {
            Task::Classify => {
                let gold = ex.labels.as_deref().ok_or_else(|| missing("labels"))?;
                if let Head::ClsCrf(_, crf_layer) = &self.head {
                    let vars = crf_layer.bind(g);
                    let nll = crf::nll_on_tape(g.tape, out, vars, gold)?;
                    Ok(g.tape.scale(nll, 1.0 / ex.len() as f64)?)
                } else {
                    Ok(g.tape.cross_entropy(out, gold)?)
                }
            }
            Task::Summarize => {
                let target = ex.targets.as_deref().ok_or_else(|| missing("targets"))?;
                Ok(g.tape.mse(out, target)?)
            }
        }
    }

    pub fn predict(&self, store: &ParamStore, ex: &Example) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new();
        let mut g = Graph::eval(&mut tape, store);
        let out = self.output(&mut g, ex)?;
        let values = tape.tensor(out);
        Ok(match self.spec.task {
            Task::Summarize => Prediction::Scores(values.into_data()),
            Task::Classify => match &self.head {
                Head::ClsCrf(_, layer) => {
                    let p = crf::CrfParams {
                        labels: self.spec.num_labels,
                        transitions: store.value(layer.transitions).data().to_vec(),
                        start: store.value(layer.start).data().to_vec(),
                        end: store.value(layer.end).data().to_vec(),
                    };
                    Prediction::Labels(crf::viterbi(&values, &p)?.0)
                }
                _ => Prediction::Labels((0..values.rows()).map(|i| argmax(values.row(i))).collect()),
            },
        })
    }

    /// Predictions for every example, in input order, computed on all
    /// available cores.
    pub fn predict_all(&self, store: &ParamStore, examples: &[Example]) -> Result<Vec<Prediction>, ModelError> {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        if threads == 1 || examples.len() < 2 {
            return examples.iter().map(|ex| self.predict(store, ex)).collect();
        }
        let chunk = examples.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = examples
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|ex| self.predict(store, ex)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("prediction thread panicked"))
                .collect()
        })
    }

    /// Per-document predictions, reassembled across splits.
    pub fn predict_documents(
        &self,
        store: &ParamStore,
        examples: &[Example],
        num_docs: usize,
    ) -> Result<Vec<Prediction>, ModelError> {
        let mut per_doc: Vec<Vec<(Range<usize>, Prediction)>> = vec![Vec::new(); num_docs];
        for (ex, pred) in examples.iter().zip(self.predict_all(store, examples)?) {
            per_doc[ex.doc].push((ex.range.clone(), pred));
        }
        per_doc
            .into_iter()
            .map(|parts| {
                let ranges: Vec<Range<usize>> = parts.iter().map(|(r, _)| r.clone()).collect();
                Ok(match self.spec.task {
                    Task::Classify => {
                        let preds = parts
                            .into_iter()
                            .map(|(_, p)| match p {
                                Prediction::Labels(l) => l,
                                Prediction::Scores(_) => unreachable!("classification predicts labels"),
                            })
                            .collect();
                        Prediction::Labels(unpack(preds, &ranges)?)
                    }
                    Task::Summarize => {
                        let preds = parts
                            .into_iter()
                            .map(|(_, p)| match p {
                                Prediction::Scores(s) => s,
                                Prediction::Labels(_) => unreachable!("summarization predicts scores"),
                            })
                            .collect();
                        Prediction::Scores(unpack(preds, &ranges)?)
                    }
                })
            })
            .collect()
    }
}

/// Index of the largest value; the first on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
