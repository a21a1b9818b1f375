use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{CorpusError, LabelSet};
use crate::seqpack::Document;

pub const QUALIFICATION_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub worker: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub votes: Vec<Vote>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub labels: LabelSet,
    pub sentences: Vec<AnnotatedSentence>,
    pub accuracies: BTreeMap<String, f64>,
}

/// Workers whose accuracy reaches `threshold`.
pub fn qualify(accuracies: &BTreeMap<String, f64>, threshold: f64) -> BTreeSet<String> {
    accuracies
        .iter()
        .filter(|(_, &a)| a >= threshold)
        .map(|(w, _)| w.clone())
        .collect()
}

/// Accuracy-weighted plurality over `num_labels` labels. Returns the label
/// with the largest summed accuracy (lowest id on ties) and its share of
/// the total.
pub fn aggregate(
    votes: &[Vote],
    accuracies: &BTreeMap<String, f64>,
    num_labels: usize,
) -> Result<(usize, f64), CorpusError> {
    if votes.is_empty() {
        return Err(CorpusError::Aggregation("no votes".into()));
    }
    let mut scores = vec![0.0; num_labels];
    for v in votes {
        let acc = accuracies
            .get(&v.worker)
            .ok_or_else(|| CorpusError::Aggregation(format!("worker {} has no accuracy", v.worker)))?;
        let slot = scores
            .get_mut(v.label)
            .ok_or_else(|| CorpusError::Aggregation(format!("label id {} out of range", v.label)))?;
        *slot += acc;
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(CorpusError::Aggregation("votes carry no weight".into()));
    }
    let mut best = 0;
    for (l, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = l;
        }
    }
    Ok((best, scores[best] / total))
}

/// Aggregates every sentence from qualified workers only. Document
/// confidence is the mean sentence confidence.
pub fn aggregate_annotations(set: &AnnotationSet, threshold: f64) -> Result<Vec<Document>, CorpusError> {
    let qualified = qualify(&set.accuracies, threshold);
    let mut unresolved = Vec::new();
    let mut docs: Vec<Document> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for s in &set.sentences {
        let votes: Vec<Vote> = s.votes.iter().filter(|v| qualified.contains(&v.worker)).cloned().collect();
        if votes.is_empty() {
            unresolved.push(format!("{}:{}", s.doc_id, s.index));
            continue;
        }
        let (label, conf) = aggregate(&votes, &set.accuracies, set.labels.len())?;
        let i = *pos.entry(&s.doc_id).or_insert_with(|| {
            let mut d = Document::new(s.doc_id.clone(), Vec::new());
            d.labels = Some(Vec::new());
            d.sentence_confidences = Some(Vec::new());
            docs.push(d);
            docs.len() - 1
        });
        let d = &mut docs[i];
        d.sentences.push(s.text.clone());
        d.labels.as_mut().expect("set above").push(label);
        d.sentence_confidences.as_mut().expect("set above").push(conf);
    }
    if !unresolved.is_empty() {
        return Err(CorpusError::Aggregation(format!(
            "no qualified votes for sentences {}",
            unresolved.join(", ")
        )));
    }
    for d in &mut docs {
        let c = d.sentence_confidences.as_ref().expect("set above");
        d.confidence = Some(c.iter().sum::<f64>() / c.len() as f64);
    }
    Ok(docs)
}

#[derive(Debug, Deserialize)]
struct VoteRow {
    doc_id: String,
    sentence: usize,
    text: String,
    worker: String,
    label: String,
}

#[derive(Debug, Deserialize)]
struct AccuracyRow {
    worker: String,
    accuracy: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> CorpusError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    CorpusError::Parse {
        path: path.display().to_string(),
        line,
        msg: e.to_string(),
    }
}

/// Reads a votes CSV with header `doc_id,sentence,text,worker,label`.
/// Sentences of a document must be numbered `0..n`.
pub fn load_votes(
    path: &Path,
    labels: Option<&LabelSet>,
) -> Result<(LabelSet, Vec<AnnotatedSentence>), CorpusError> {
    let grow = labels.is_none();
    let mut set = labels.cloned().unwrap_or_default();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut by_key: BTreeMap<(usize, usize), AnnotatedSentence> = BTreeMap::new();
    let mut doc_order: HashMap<String, usize> = HashMap::new();
    for row in rdr.deserialize::<VoteRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let label = set.resolve(&row.label, grow)?;
        let next = doc_order.len();
        let d = *doc_order.entry(row.doc_id.clone()).or_insert(next);
        let s = by_key.entry((d, row.sentence)).or_insert_with(|| AnnotatedSentence {
            doc_id: row.doc_id.clone(),
            index: row.sentence,
            text: row.text.clone(),
            votes: Vec::new(),
        });
        if s.text != row.text {
            return Err(CorpusError::Schema(format!(
                "sentence {}:{} has conflicting texts",
                row.doc_id, row.sentence
            )));
        }
        s.votes.push(Vote {
            worker: row.worker,
            label,
        });
    }
    let sentences: Vec<AnnotatedSentence> = by_key.into_values().collect();
    let mut expected = 0;
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 && sentences[i - 1].doc_id != s.doc_id {
            expected = 0;
        }
        if s.index != expected {
            return Err(CorpusError::Schema(format!(
                "document {} is missing sentence {expected}",
                s.doc_id
            )));
        }
        expected += 1;
    }
    Ok((set, sentences))
}

/// Reads a CSV with header `worker,accuracy`.
pub fn load_accuracies(path: &Path) -> Result<BTreeMap<String, f64>, CorpusError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<AccuracyRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if !(0.0..=1.0).contains(&row.accuracy) {
            return Err(CorpusError::Schema(format!(
                "worker {} has accuracy {} outside [0, 1]",
                row.worker, row.accuracy
            )));
        }
        if out.insert(row.worker.clone(), row.accuracy).is_some() {
            return Err(CorpusError::Schema(format!("worker {} listed twice", row.worker)));
        }
    }
    Ok(out)
}
