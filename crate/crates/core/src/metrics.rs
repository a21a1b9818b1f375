//! Classification and summarization metrics.

use std::collections::HashMap;

use thiserror::Error;

use crate::seqpack::tokenize;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("cannot score an empty list of predictions")]
    Empty,
    #[error("label {label} outside a label set of {classes}")]
    Label { label: usize, classes: usize },
    #[error("n-gram order must be at least 1")]
    Order,
    #[error("reference is empty")]
    EmptyReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPair {
    pub gold: usize,
    pub pred: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl RougeScore {
    /// F1 from overlap counts, so equal ratios give exact results.
    fn from_counts(hits: usize, cand: usize, reference: usize) -> Self {
        if hits == 0 {
            return Self::default();
        }
        Self {
            precision: hits as f64 / cand as f64,
            recall: hits as f64 / reference as f64,
            f: 2.0 * hits as f64 / (cand + reference) as f64,
        }
    }
}

/// Micro-averaged F1 over `classes` labels.
pub fn micro_f1(pairs: &[LabeledPair], classes: usize) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let (mut tp, mut fp, mut fns) = (0usize, 0usize, 0usize);
    for p in pairs {
        for label in [p.gold, p.pred] {
            if label >= classes {
                return Err(MetricError::Label { label, classes });
            }
        }
        if p.gold == p.pred {
            tp += 1;
        } else {
            fp += 1;
            fns += 1;
        }
    }
    Ok(if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fns) as f64
    })
}

pub fn accuracy(pairs: &[LabeledPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = pairs.iter().filter(|p| p.gold == p.pred).count();
    Ok(hits as f64 / pairs.len() as f64)
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L with beta = 1. An empty candidate scores 0.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<RougeScore, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let lcs = lcs_length(candidate, reference);
    Ok(RougeScore::from_counts(lcs, candidate.len(), reference.len()))
}

/// ROUGE-N with clipped n-gram counts. `recall` is the headline number.
pub fn rouge_n<T: Eq + std::hash::Hash>(
    candidate: &[T],
    reference: &[T],
    n: usize,
) -> Result<RougeScore, MetricError> {
    if n == 0 {
        return Err(MetricError::Order);
    }
    fn grams<T: Eq + std::hash::Hash>(xs: &[T], n: usize) -> HashMap<&[T], usize> {
        let mut m = HashMap::new();
        for w in xs.windows(n) {
            *m.entry(w).or_default() += 1;
        }
        m
    }
    let c = grams(candidate, n);
    let r = grams(reference, n);
    let hits = r
        .iter()
        .map(|(g, &rc)| rc.min(c.get(g).copied().unwrap_or(0)))
        .sum();
    let total = |xs: &[T]| (xs.len() + 1).saturating_sub(n);
    if total(reference) == 0 {
        return Ok(RougeScore::default());
    }
    Ok(RougeScore::from_counts(hits, total(candidate), total(reference)))
}

fn joined_tokens(texts: &[String]) -> Vec<String> {
    texts.iter().flat_map(|s| tokenize(s)).collect()
}

/// Per-sentence regression targets: ROUGE-L F of each sentence against
/// the concatenated highlights.
pub fn sentence_targets(sentences: &[String], highlights: &[String]) -> Result<Vec<f64>, MetricError> {
    let reference = joined_tokens(highlights);
    sentences
        .iter()
        .map(|s| Ok(rouge_l(&tokenize(s), &reference)?.f))
        .collect()
}

/// ROUGE-L F of `sentence` against the concatenated abstract.
pub fn abstract_rouge(sentence: &str, abstract_sentences: &[String]) -> Result<f64, MetricError> {
    Ok(rouge_l(&tokenize(sentence), &joined_tokens(abstract_sentences))?.f)
}

/// Indices of the `k` highest scores in document order. Equal scores
/// prefer the earlier sentence.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}
