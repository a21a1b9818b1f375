use serde::{Deserialize, Serialize};

use super::PackError;

/// An ordered list of sentences with optional per-sentence supervision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<String>,
    /// Label ids into the owning corpus' label set.
    pub labels: Option<Vec<usize>>,
    /// Regression targets in `[0, 1]`, one per sentence.
    pub scores: Option<Vec<f64>>,
    pub confidence: Option<f64>,
    /// Per-sentence annotation confidence, when aggregated from votes.
    pub sentence_confidences: Option<Vec<f64>>,
    /// Reference summary sentences for extractive evaluation.
    pub highlights: Option<Vec<String>>,
    /// Abstract sentences, the source of the abstract-similarity feature.
    pub abstract_sentences: Option<Vec<String>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, sentences: Vec<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            sentences,
            labels: None,
            scores: None,
            confidence: None,
            sentence_confidences: None,
            highlights: None,
            abstract_sentences: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_scores(mut self, scores: Vec<f64>) -> Self {
        self.scores = Some(scores);
        self
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Checks that the document is non-empty and every per-sentence field
    /// aligns with the sentences.
    pub fn validate(&self) -> Result<(), PackError> {
        let fail = |msg: String| {
            Err(PackError::Document {
                doc_id: self.doc_id.clone(),
                msg,
            })
        };
        if self.sentences.is_empty() {
            return fail("no sentences".into());
        }
        let n = self.sentences.len();
        if let Some(l) = &self.labels {
            if l.len() != n {
                return fail(format!("{} labels for {n} sentences", l.len()));
            }
        }
        if let Some(s) = &self.scores {
            if s.len() != n {
                return fail(format!("{} scores for {n} sentences", s.len()));
            }
            if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return fail("scores must lie in [0, 1]".into());
            }
        }
        if let Some(c) = &self.sentence_confidences {
            if c.len() != n {
                return fail(format!("{} sentence confidences for {n} sentences", c.len()));
            }
        }
        Ok(())
    }
}
