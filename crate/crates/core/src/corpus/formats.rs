use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, LabelSet};
use crate::seqpack::Document;

/// Parses the PubMed-RCT layout: `###<doc_id>` opens a block of
/// `LABEL<TAB>sentence` lines, and a blank line closes it.
///
/// With `labels` given, unknown labels are an error; otherwise the label
/// set grows in order of first appearance.
pub fn parse_rct(text: &str, origin: &str, labels: Option<&LabelSet>) -> Result<Corpus, CorpusError> {
    let grow = labels.is_none();
    let mut set = labels.cloned().unwrap_or_default();
    let mut docs = Vec::new();
    let mut current: Option<(String, Vec<String>, Vec<usize>)> = None;
    let err = |line: usize, msg: String| CorpusError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let finish = |cur: &mut Option<(String, Vec<String>, Vec<usize>)>, docs: &mut Vec<Document>| {
        if let Some((id, sents, labs)) = cur.take() {
            docs.push(Document::new(id, sents).with_labels(labs));
        }
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(id) = line.strip_prefix("###") {
            finish(&mut current, &mut docs);
            current = Some((id.to_string(), Vec::new(), Vec::new()));
        } else if line.is_empty() {
            if let Some((id, sents, _)) = &current {
                if sents.is_empty() {
                    return Err(err(lineno, format!("document {id} has no sentences")));
                }
            }
            finish(&mut current, &mut docs);
        } else {
            let Some((_, sents, labs)) = current.as_mut() else {
                return Err(err(lineno, "sentence outside a ###<doc_id> block".into()));
            };
            let Some((label, sentence)) = line.split_once('\t') else {
                return Err(err(lineno, "expected LABEL<TAB>sentence".into()));
            };
            let id = set.resolve(label, grow).map_err(|e| err(lineno, e.to_string()))?;
            labs.push(id);
            sents.push(sentence.to_string());
        }
    }
    if let Some((id, sents, _)) = &current {
        if sents.is_empty() {
            return Err(err(text.lines().count(), format!("document {id} has no sentences")));
        }
    }
    finish(&mut current, &mut docs);
    Ok(Corpus { labels: set, docs })
}

pub fn load_rct(path: &Path, labels: Option<&LabelSet>) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    parse_rct(&text, &path.display().to_string(), labels)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    doc_id: String,
    sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentence_confidences: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    highlights: Option<Vec<String>>,
    #[serde(default, rename = "abstract", skip_serializing_if = "Option::is_none")]
    abstract_sentences: Option<Vec<String>>,
}

/// One JSON object per line. Labels are stored by name.
pub fn parse_jsonl(text: &str, origin: &str, labels: Option<&LabelSet>) -> Result<Corpus, CorpusError> {
    let grow = labels.is_none();
    let mut set = labels.cloned().unwrap_or_default();
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| CorpusError::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let r: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let labels = match r.labels {
            Some(names) => Some(
                names
                    .iter()
                    .map(|n| set.resolve(n, grow))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| err(e.to_string()))?,
            ),
            None => None,
        };
        let doc = Document {
            doc_id: r.doc_id,
            sentences: r.sentences,
            labels,
            scores: r.scores,
            confidence: r.confidence,
            sentence_confidences: r.sentence_confidences,
            highlights: r.highlights,
            abstract_sentences: r.abstract_sentences,
        };
        doc.validate()
            .map_err(|e| CorpusError::Schema(format!("{origin}:{}: {e}", i + 1)))?;
        docs.push(doc);
    }
    Ok(Corpus { labels: set, docs })
}

pub fn load_jsonl(path: &Path, labels: Option<&LabelSet>) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    parse_jsonl(&text, &path.display().to_string(), labels)
}

pub fn to_jsonl(docs: &[Document], labels: &LabelSet) -> Result<String, CorpusError> {
    let mut out = Vec::new();
    for d in docs {
        let names = match &d.labels {
            Some(ids) => Some(
                ids.iter()
                    .map(|&id| {
                        labels
                            .name(id)
                            .map(str::to_string)
                            .ok_or_else(|| CorpusError::UnknownLabel(id.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let r = Record {
            doc_id: d.doc_id.clone(),
            sentences: d.sentences.clone(),
            labels: names,
            scores: d.scores.clone(),
            confidence: d.confidence,
            sentence_confidences: d.sentence_confidences.clone(),
            highlights: d.highlights.clone(),
            abstract_sentences: d.abstract_sentences.clone(),
        };
        serde_json::to_writer(&mut out, &r).map_err(|e| CorpusError::Schema(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn save_jsonl(path: &Path, docs: &[Document], labels: &LabelSet) -> Result<(), CorpusError> {
    Ok(std::fs::write(path, to_jsonl(docs, labels)?)?)
}
