use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusError, LabelSet};
use crate::metrics::sentence_targets;
use crate::seqpack::Document;

/// Cue words of the context corpus. The label names match.
pub const CUES: [&str; 2] = ["alpha", "beta"];

const DISTRACTORS: [&str; 24] = [
    "the", "model", "data", "we", "show", "result", "method", "paper", "task", "set", "new", "large",
    "small", "using", "based", "study", "our", "system", "work", "figure", "table", "value", "test",
    "case",
];

const SALIENT: [&str; 16] = [
    "novel", "outperforms", "significantly", "state", "art", "propose", "improves", "accuracy",
    "achieves", "gains", "introduce", "robust", "efficient", "framework", "superior", "benchmark",
];

const FILLER: [&str; 24] = [
    "river", "table", "yellow", "window", "garden", "stone", "cloud", "paper", "street", "music",
    "winter", "coffee", "letter", "bridge", "forest", "candle", "market", "silver", "engine",
    "pocket", "island", "mirror", "ladder", "basket",
];

const WORDS_PER_SENTENCE: usize = 7;

/// Documents whose sentence labels depend on the previous sentence.
///
/// Every sentence holds one cue word among distractors. Sentence `i > 0`
/// is labeled with the cue of sentence `i - 1`; sentence 0 with its own.
pub fn gen_synthetic(seed: u64, n_docs: usize, sentences_per_doc: usize) -> Result<Corpus, CorpusError> {
    if sentences_per_doc < 2 {
        return Err(CorpusError::Schema(format!(
            "synthetic documents need at least 2 sentences, got {sentences_per_doc}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = LabelSet::new(CUES).expect("distinct cues");
    let mut docs = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let cues: Vec<usize> = (0..sentences_per_doc).map(|_| rng.gen_range(0..CUES.len())).collect();
        let sentences = cues
            .iter()
            .map(|&c| {
                let slot = rng.gen_range(0..WORDS_PER_SENTENCE);
                let mut words: Vec<&str> = (0..WORDS_PER_SENTENCE)
                    .map(|i| if i == slot { CUES[c] } else { DISTRACTORS.choose(&mut rng).expect("non-empty") })
                    .collect();
                words.push(".");
                words.join(" ")
            })
            .collect();
        let gold = (0..sentences_per_doc).map(|i| cues[i.saturating_sub(1)]).collect();
        docs.push(Document::new(format!("syn-{d:05}"), sentences).with_labels(gold));
    }
    Ok(Corpus { labels, docs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummarizationSpec {
    pub n_docs: usize,
    pub sentences_per_doc: usize,
    pub highlights_per_doc: usize,
}

impl Default for SummarizationSpec {
    fn default() -> Self {
        Self {
            n_docs: 200,
            sentences_per_doc: 24,
            highlights_per_doc: 5,
        }
    }
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &[&str]) -> String {
    let n = rng.gen_range(6..=9);
    let mut words: Vec<&str> = (0..n).map(|_| *vocab.choose(rng).expect("non-empty")).collect();
    words.push(".");
    words.join(" ")
}

/// Documents with planted highlight sentences drawn from a vocabulary the
/// other sentences never use. The highlights are the planted sentences
/// verbatim, scores are their ROUGE-L targets, and the abstract repeats the
/// first two highlights.
pub fn gen_summarization(seed: u64, spec: SummarizationSpec) -> Result<Corpus, CorpusError> {
    let SummarizationSpec {
        n_docs,
        sentences_per_doc,
        highlights_per_doc,
    } = spec;
    if highlights_per_doc == 0 || highlights_per_doc > sentences_per_doc {
        return Err(CorpusError::Schema(format!(
            "cannot plant {highlights_per_doc} highlights in {sentences_per_doc} sentences"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let mut planted: Vec<usize> = (0..sentences_per_doc)
            .collect::<Vec<_>>()
            .choose_multiple(&mut rng, highlights_per_doc)
            .copied()
            .collect();
        planted.sort_unstable();
        let sentences: Vec<String> = (0..sentences_per_doc)
            .map(|i| {
                let vocab: &[&str] = if planted.contains(&i) { &SALIENT } else { &FILLER };
                sentence(&mut rng, vocab)
            })
            .collect();
        let highlights: Vec<String> = planted.iter().map(|&i| sentences[i].clone()).collect();
        let scores = sentence_targets(&sentences, &highlights).expect("highlights are non-empty");
        let mut doc = Document::new(format!("sum-{d:05}"), sentences).with_scores(scores);
        doc.abstract_sentences = Some(highlights.iter().take(2).cloned().collect());
        doc.highlights = Some(highlights);
        docs.push(doc);
    }
    Ok(Corpus {
        labels: LabelSet::default(),
        docs,
    })
}

/// Sentence indices of the planted highlights.
pub fn planted_indices(doc: &Document) -> Vec<usize> {
    let Some(h) = &doc.highlights else {
        return Vec::new();
    };
    doc.sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| h.contains(s))
        .map(|(i, _)| i)
        .collect()
}
