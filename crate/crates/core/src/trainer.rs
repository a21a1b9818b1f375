//! Optimization: Adam, gradient accumulation, learning-rate and seed
//! sweeps with dev-set model selection, and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::init_model;
use crate::encoder::Graph;
use crate::metrics::{micro_f1, rouge_l, select_top_k, LabeledPair, MetricError};
use crate::model::{prepare, Example, Model, ModelError, ModelSpec, Prediction, Task};
use crate::seqpack::{tokenize, Document, Vocab};
use crate::tensor::{ParamStore, Tape, TensorError};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Sentences extracted per summary.
pub const TOP_K: usize = 10;
pub const DEFAULT_LEARNING_RATES: [f64; 4] = [5e-6, 1e-5, 2e-5, 5e-5];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("optimizer state does not match parameters: {0}")]
    Shape(String),
    #[error("non-finite loss {loss} at step {step} (seed {seed}, lr {lr})")]
    Divergence { seed: u64, lr: f64, step: usize, loss: f64 },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Tried in order; the one with the best mean dev metric wins.
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub micro_batch: usize,
    pub effective_batch: usize,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
            epochs: 3,
            micro_batch: 8,
            effective_batch: 32,
            seeds: vec![1, 2, 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.learning_rates.is_empty() || self.seeds.is_empty() {
            return fail("at least one learning rate and one seed are required".into());
        }
        if let Some(lr) = self.learning_rates.iter().find(|lr| !(lr.is_finite() && **lr > 0.0)) {
            return fail(format!("learning rate {lr} must be positive"));
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.micro_batch == 0 || !self.effective_batch.is_multiple_of(self.micro_batch) {
            return fail(format!(
                "effective batch {} is not a multiple of micro-batch {}",
                self.effective_batch, self.micro_batch
            ));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments, one slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update of every parameter from its accumulated gradient.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<(), TrainError> {
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(TrainError::Shape(format!(
            "{} moment slots for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        let n = store.value(id).len();
        let i = id.index();
        if state.m[i].len() != n || state.v[i].len() != n {
            return Err(TrainError::Shape(format!("{} has {n} values", store.name(id))));
        }
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powf(state.t as f64);
    let c2 = 1.0 - BETA2.powf(state.t as f64);
    for id in store.ids().collect::<Vec<_>>() {
        let i = id.index();
        let (value, grad) = store.value_and_grad(id);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, (p, &g)) in value.data_mut().iter_mut().zip(grad).enumerate() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean example loss over the batch, before the update.
    pub loss: f64,
    pub examples: usize,
}

/// Sums gradients of `batch` over micro-batches of `micro_batch` examples,
/// scaled to the gradient of the batch mean loss, then takes one Adam step.
/// Dropout is drawn from `rng` when given. A non-finite loss leaves the
/// parameters untouched and is reported as a NaN loss.
pub fn accumulate_and_step(
    model: &Model,
    store: &mut ParamStore,
    state: &mut AdamState,
    batch: &[&Example],
    micro_batch: usize,
    lr: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<StepStats, TrainError> {
    if batch.is_empty() || micro_batch == 0 {
        return Err(TrainError::Config("empty batch".into()));
    }
    store.zero_grads();
    let total = batch.len() as f64;
    let diverged = StepStats {
        loss: f64::NAN,
        examples: batch.len(),
    };
    let mut loss_sum = 0.0;
    for mb in batch.chunks(micro_batch) {
        let grads = {
            let mut tape = Tape::new();
            let mut g = match rng.as_deref_mut() {
                Some(r) => Graph::train(&mut tape, store, r),
                None => Graph::eval(&mut tape, store),
            };
            let mut sum = None;
            for ex in mb {
                let l = match model.loss(&mut g, ex) {
                    Ok(l) => l,
                    Err(e) if e.is_non_finite() => return Ok(diverged),
                    Err(e) => return Err(e.into()),
                };
                sum = Some(match sum {
                    None => l,
                    Some(s) => g.tape.add(s, l)?,
                });
            }
            let sum = sum.expect("non-empty micro-batch");
            let mean = g.tape.scale(sum, 1.0 / mb.len() as f64)?;
            loss_sum += tape.item(sum);
            if !tape.item(mean).is_finite() {
                return Ok(diverged);
            }
            match tape.backward(mean) {
                Ok(grads) => grads,
                Err(TensorError::NonFinite { .. }) => return Ok(diverged),
                Err(e) => return Err(e.into()),
            }
        };
        store.accumulate(&grads, mb.len() as f64 / total);
    }
    adam_step(store, state, lr)?;
    Ok(StepStats {
        loss: loss_sum / total,
        examples: batch.len(),
    })
}

/// Scores of one model on one set of documents. Fields a task does not
/// produce, or whose references are missing, are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub sentences: usize,
    pub micro_f1: Option<f64>,
    /// Mean squared error of predicted against gold sentence scores.
    pub mse: Option<f64>,
    /// Mean over documents of ROUGE-L F of the top sentences against the
    /// highlights.
    pub rouge_l: Option<f64>,
    /// Fraction of highlight sentences found verbatim among the top
    /// sentences.
    pub highlight_recall: Option<f64>,
}

impl EvalReport {
    /// Model selection metric: micro-F1 for classification, MSE for
    /// summarization.
    pub fn dev_metric(&self, task: Task) -> Option<f64> {
        match task {
            Task::Classify => self.micro_f1,
            Task::Summarize => self.mse,
        }
    }

    /// Reported test metric: micro-F1, or ROUGE-L when highlights exist.
    pub fn test_metric(&self, task: Task) -> Option<f64> {
        match task {
            Task::Classify => self.micro_f1,
            Task::Summarize => self.rouge_l.or(self.mse),
        }
    }
}

/// Whether dev metric `a` is strictly better than `b`.
pub fn improves(task: Task, a: f64, b: f64) -> bool {
    match task {
        Task::Classify => a > b,
        Task::Summarize => a < b,
    }
}

/// Compares per-document predictions against the gold annotations.
pub fn score(task: Task, num_labels: usize, docs: &[Document], preds: &[Prediction]) -> Result<EvalReport, TrainError> {
    let mut report = EvalReport {
        documents: docs.len(),
        sentences: docs.iter().map(Document::len).sum(),
        ..EvalReport::default()
    };
    match task {
        Task::Classify => {
            let mut pairs = Vec::new();
            for (doc, pred) in docs.iter().zip(preds) {
                let (Some(gold), Prediction::Labels(p)) = (&doc.labels, pred) else {
                    return Ok(report);
                };
                pairs.extend(gold.iter().zip(p).map(|(&gold, &pred)| LabeledPair { gold, pred }));
            }
            report.micro_f1 = Some(micro_f1(&pairs, num_labels)?);
        }
        Task::Summarize => {
            let mut sq = (0.0, 0usize, true);
            let mut rouge = (0.0, true);
            let mut found = (0usize, 0usize);
            for (doc, pred) in docs.iter().zip(preds) {
                let Prediction::Scores(s) = pred else {
                    return Ok(report);
                };
                match &doc.scores {
                    Some(gold) => {
                        sq.0 += gold.iter().zip(s).map(|(g, p)| (g - p) * (g - p)).sum::<f64>();
                        sq.1 += gold.len();
                    }
                    None => sq.2 = false,
                }
                match doc.highlights.as_ref().filter(|h| !h.is_empty()) {
                    Some(highlights) => {
                        let top = select_top_k(s, TOP_K);
                        let cand: Vec<String> = top.iter().flat_map(|&i| tokenize(&doc.sentences[i])).collect();
                        let reference: Vec<String> = highlights.iter().flat_map(|h| tokenize(h)).collect();
                        rouge.0 += rouge_l(&cand, &reference)?.f;
                        for h in highlights {
                            found.1 += 1;
                            if top.iter().any(|&i| doc.sentences[i].trim() == h.trim()) {
                                found.0 += 1;
                            }
                        }
                    }
                    None => rouge.1 = false,
                }
            }
            if sq.2 && sq.1 > 0 {
                report.mse = Some(sq.0 / sq.1 as f64);
            }
            if rouge.1 && !docs.is_empty() {
                report.rouge_l = Some(rouge.0 / docs.len() as f64);
                report.highlight_recall = Some(found.0 as f64 / found.1 as f64);
            }
        }
    }
    Ok(report)
}

/// Predicts every document in `docs` and scores the result.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    docs: &[Document],
    examples: &[Example],
) -> Result<(EvalReport, Vec<Prediction>), TrainError> {
    let preds = model.predict_documents(store, examples, docs.len())?;
    let report = score(model.spec.task, model.spec.num_labels, docs, &preds)?;
    Ok((report, preds))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub seed: u64,
    pub lr: f64,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub lr: f64,
    /// 1-based epoch of the kept parameters.
    pub best_epoch: usize,
    pub dev_metric: f64,
    pub test: EvalReport,
}

/// Result of a sweep: the selected learning rate, every run under it,
/// and the parameters of the best run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub lr: f64,
    pub runs: Vec<SeedRun>,
    /// Mean over seeds for classification; the best run's for
    /// summarization.
    pub test_metric: f64,
    pub best_seed: u64,
    pub model: Model,
    pub store: ParamStore,
}

/// Training, dev and test documents.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [Document],
    pub dev: &'a [Document],
    pub test: &'a [Document],
}

struct Prepared {
    train: Vec<Example>,
    dev: Vec<Example>,
    test: Vec<Example>,
}

/// Trains one seed at one learning rate, keeping the best-dev parameters.
#[allow(clippy::too_many_arguments)]
fn train_one(
    spec: &ModelSpec,
    splits: Splits,
    data: &Prepared,
    config: &TrainConfig,
    seed: u64,
    lr: f64,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<(SeedRun, Model, ParamStore), TrainError> {
    let (model, mut store) = init_model(spec, seed)?;
    let mut state = AdamState::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(config.effective_batch) {
            step += 1;
            let batch: Vec<&Example> = batch.iter().map(|&i| &data.train[i]).collect();
            let dropout = (spec.encoder.dropout > 0.0).then_some(&mut rng);
            let stats = accumulate_and_step(&model, &mut store, &mut state, &batch, config.micro_batch, lr, dropout)?;
            if !stats.loss.is_finite() {
                return Err(TrainError::Divergence {
                    seed,
                    lr,
                    step,
                    loss: stats.loss,
                });
            }
            loss_sum += stats.loss * stats.examples as f64;
            count += stats.examples;
        }
        let (dev, _) = evaluate(&model, &store, splits.dev, &data.dev)?;
        let dev_metric = dev
            .dev_metric(spec.task)
            .ok_or_else(|| TrainError::Config("dev documents lack gold annotations".into()))?;
        log(&EpochLog {
            seed,
            lr,
            epoch,
            train_loss: loss_sum / count as f64,
            dev_metric,
        });
        if best.as_ref().is_none_or(|(b, _, _)| improves(spec.task, dev_metric, *b)) {
            best = Some((dev_metric, epoch, store.clone()));
        }
    }
    let (dev_metric, best_epoch, mut store) = best.expect("at least one epoch");
    store.zero_grads();
    let (test, _) = evaluate(&model, &store, splits.test, &data.test)?;
    let run = SeedRun {
        seed,
        lr,
        best_epoch,
        dev_metric,
        test,
    };
    Ok((run, model, store))
}

/// Runs every learning rate with every seed. The learning rate with the
/// best mean dev metric is selected; within it, the run with the best dev
/// metric supplies the returned parameters.
pub fn train(
    spec: &ModelSpec,
    vocab: &Vocab,
    splits: Splits,
    config: &TrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    spec.validate().map_err(TrainError::from)?;
    for (name, docs) in [("train", splits.train), ("dev", splits.dev), ("test", splits.test)] {
        if docs.is_empty() {
            return Err(TrainError::EmptySplit(name));
        }
    }
    let data = Prepared {
        train: prepare(spec, vocab, splits.train)?,
        dev: prepare(spec, vocab, splits.dev)?,
        test: prepare(spec, vocab, splits.test)?,
    };

    let mut chosen: Option<(f64, f64, Vec<(SeedRun, Model, ParamStore)>)> = None;
    for &lr in &config.learning_rates {
        let runs = config
            .seeds
            .iter()
            .map(|&seed| train_one(spec, splits, &data, config, seed, lr, log))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_dev = runs.iter().map(|(r, _, _)| r.dev_metric).sum::<f64>() / runs.len() as f64;
        if chosen.as_ref().is_none_or(|(_, best, _)| improves(spec.task, mean_dev, *best)) {
            chosen = Some((lr, mean_dev, runs));
        }
    }
    let (lr, _, runs) = chosen.expect("at least one learning rate");
    let mut best = 0;
    for (i, (r, _, _)) in runs.iter().enumerate() {
        if improves(spec.task, r.dev_metric, runs[best].0.dev_metric) {
            best = i;
        }
    }
    let metric = |r: &SeedRun| {
        r.test
            .test_metric(spec.task)
            .ok_or_else(|| TrainError::Config("test documents lack gold annotations".into()))
    };
    let test_metric = match spec.task {
        Task::Classify => {
            let ms = runs.iter().map(|(r, _, _)| metric(r)).collect::<Result<Vec<_>, _>>()?;
            ms.iter().sum::<f64>() / ms.len() as f64
        }
        Task::Summarize => metric(&runs[best].0)?,
    };
    let seed_runs: Vec<SeedRun> = runs.iter().map(|(r, _, _)| r.clone()).collect();
    let (run, model, store) = runs.into_iter().nth(best).expect("best index in range");
    Ok(TrainOutcome {
        lr,
        runs: seed_runs,
        test_metric,
        best_seed: run.seed,
        model,
        store,
    })
}
