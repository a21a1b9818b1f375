use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Document, PackError, Vocab, CLS, PAD, SEP};

/// Which special token carries each sentence's representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Marker {
    /// The `[SEP]` that closes the sentence.
    #[default]
    Sep,
    /// A `[CLS]` opening the sentence; the first sentence reuses the leading
    /// `[CLS]` of the sequence.
    Cls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackOptions {
    pub max_tokens: usize,
    pub marker: Marker,
}

impl Default for PackOptions {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            marker: Marker::Sep,
        }
    }
}

/// Token ids for one split of a document:
/// `[CLS] t(S_a) [SEP] t(S_a+1) [SEP] …`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedInput {
    pub token_ids: Vec<usize>,
    /// Position of the `[SEP]` closing each sentence, ascending.
    pub sep_positions: Vec<usize>,
    /// Position read by the classifier for each sentence.
    pub marker_positions: Vec<usize>,
    /// Sentences of the source document covered by this split.
    pub sentence_range: Range<usize>,
    /// `false` for padding.
    pub attention_mask: Vec<bool>,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn num_sentences(&self) -> usize {
        self.sep_positions.len()
    }

    /// Appends `[PAD]` tokens, masked out of attention, up to `len`.
    pub fn pad_to(&mut self, len: usize) {
        while self.token_ids.len() < len {
            self.token_ids.push(PAD);
            self.attention_mask.push(false);
        }
    }
}

/// Splits `0..n` by recursive bisection until every range holds at most
/// `threshold` sentences. An odd range gives its extra sentence to the
/// first half.
pub fn bisect_split(n: usize, threshold: usize) -> Vec<Range<usize>> {
    fn go(range: Range<usize>, threshold: usize, out: &mut Vec<Range<usize>>) {
        let len = range.len();
        if len <= threshold {
            out.push(range);
            return;
        }
        let mid = range.start + len.div_ceil(2);
        go(range.start..mid, threshold, out);
        go(mid..range.end, threshold, out);
    }
    let mut out = Vec::new();
    if n > 0 {
        go(0..n, threshold.max(1), &mut out);
    }
    out
}

/// Packs sentences `range` of `doc` into one sequence.
///
/// When the sentences exceed the token budget, each sentence keeps
/// `floor(len * available / total)` leading tokens; delimiters are never
/// dropped.
pub fn pack(
    doc: &Document,
    range: Range<usize>,
    vocab: &Vocab,
    opts: &PackOptions,
) -> Result<PackedInput, PackError> {
    if range.is_empty() || range.end > doc.sentences.len() {
        return Err(PackError::Range {
            doc_id: doc.doc_id.clone(),
            start: range.start,
            end: range.end,
            len: doc.sentences.len(),
        });
    }
    let mut sentences: Vec<Vec<usize>> = doc.sentences[range.clone()]
        .iter()
        .map(|s| vocab.encode(s))
        .collect();
    if let Some(i) = sentences.iter().position(Vec::is_empty) {
        return Err(PackError::EmptySentence {
            doc_id: doc.doc_id.clone(),
            sentence: range.start + i,
        });
    }

    let n = sentences.len();
    let overhead = 1 + n + if opts.marker == Marker::Cls { n - 1 } else { 0 };
    let total: usize = sentences.iter().map(Vec::len).sum();
    if overhead + total > opts.max_tokens {
        let available = opts.max_tokens.saturating_sub(overhead);
        for (i, s) in sentences.iter_mut().enumerate() {
            let keep = s.len() * available / total;
            if keep == 0 {
                return Err(PackError::Truncated {
                    doc_id: doc.doc_id.clone(),
                    sentence: range.start + i,
                    max_tokens: opts.max_tokens,
                });
            }
            s.truncate(keep);
        }
    }

    let mut token_ids = vec![CLS];
    let mut sep_positions = Vec::with_capacity(n);
    let mut marker_positions = Vec::with_capacity(n);
    for (i, s) in sentences.iter().enumerate() {
        match opts.marker {
            Marker::Sep => {}
            Marker::Cls if i == 0 => marker_positions.push(0),
            Marker::Cls => {
                marker_positions.push(token_ids.len());
                token_ids.push(CLS);
            }
        }
        token_ids.extend_from_slice(s);
        sep_positions.push(token_ids.len());
        token_ids.push(SEP);
    }
    if opts.marker == Marker::Sep {
        marker_positions.clone_from(&sep_positions);
    }
    let attention_mask = vec![true; token_ids.len()];
    Ok(PackedInput {
        token_ids,
        sep_positions,
        marker_positions,
        sentence_range: range,
        attention_mask,
    })
}

/// Reassembles per-split predictions into document order. `splits` must
/// be the contiguous ranges the predictions were made on.
pub fn unpack<T>(predictions: Vec<Vec<T>>, splits: &[Range<usize>]) -> Result<Vec<T>, PackError> {
    if predictions.len() != splits.len() {
        return Err(PackError::Alignment(format!(
            "{} prediction groups for {} splits",
            predictions.len(),
            splits.len()
        )));
    }
    let mut out = Vec::new();
    for (preds, range) in predictions.into_iter().zip(splits) {
        if range.start != out.len() {
            return Err(PackError::Alignment(format!(
                "split {range:?} does not continue at sentence {}",
                out.len()
            )));
        }
        if preds.len() != range.len() {
            return Err(PackError::Alignment(format!(
                "{} predictions for split {range:?}",
                preds.len()
            )));
        }
        out.extend(preds);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn doc(sentences: &[&str]) -> Document {
        Document::new("d", sentences.iter().map(|s| s.to_string()).collect())
    }

    fn lens(r: &[Range<usize>]) -> Vec<usize> {
        r.iter().map(|r| r.len()).collect()
    }

    #[test]
    fn bisection_examples() {
        assert_eq!(bisect_split(5, 10), vec![0..5]);
        assert_eq!(bisect_split(10, 10), vec![0..10]);
        assert_eq!(lens(&bisect_split(25, 10)), [7, 6, 6, 6]);
        assert_eq!(lens(&bisect_split(11, 10)), [6, 5]);
        assert_eq!(lens(&bisect_split(3, 1)), [1, 1, 1]);
    }

    #[test]
    fn layout_and_positions() {
        let d = doc(&["a b", "c"]);
        let v = Vocab::build(std::slice::from_ref(&d), 20).unwrap();
        let p = pack(&d, 0..2, &v, &PackOptions::default()).unwrap();
        let (a, b, c) = (v.id("a"), v.id("b"), v.id("c"));
        assert_eq!(p.token_ids, [CLS, a, b, SEP, c, SEP]);
        assert_eq!(p.sep_positions, [3, 5]);
        assert_eq!(p.marker_positions, [3, 5]);
        assert_eq!(p.sentence_range, 0..2);

        let opts = PackOptions {
            marker: Marker::Cls,
            ..Default::default()
        };
        let p = pack(&d, 0..2, &v, &opts).unwrap();
        assert_eq!(p.token_ids, [CLS, a, b, SEP, CLS, c, SEP]);
        assert_eq!(p.marker_positions, [0, 4]);
        assert_eq!(p.sep_positions, [3, 6]);
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let d = doc(&["a", "   "]);
        let v = Vocab::build(std::slice::from_ref(&d), 20).unwrap();
        assert!(matches!(
            pack(&d, 0..2, &v, &PackOptions::default()),
            Err(PackError::EmptySentence { sentence: 1, .. })
        ));
        assert!(pack(&d, 1..3, &v, &PackOptions::default()).is_err());
    }

    #[test]
    fn proportional_truncation() {
        let long = vec!["w"; 200].join(" ");
        let d = doc(&[&long, &long, &long]);
        let v = Vocab::build(std::slice::from_ref(&d), 20).unwrap();
        let p = pack(&d, 0..3, &v, &PackOptions::default()).unwrap();
        // (512 - 1 - 3) * 200 / 600 = 169.33
        assert_eq!(p.len(), 1 + 3 * 169 + 3);
        assert_eq!(p.sep_positions, [170, 340, 510]);

        let opts = PackOptions {
            max_tokens: 5,
            ..Default::default()
        };
        let d = doc(&["a a a a a a a a", "b"]);
        assert!(matches!(
            pack(&d, 0..2, &v, &opts),
            Err(PackError::Truncated { sentence: 1, .. })
        ));
    }

    #[test]
    fn unpack_restores_order() {
        let splits = bisect_split(25, 10);
        let preds: Vec<Vec<usize>> = splits.iter().map(|r| r.clone().collect()).collect();
        assert_eq!(unpack(preds, &splits).unwrap(), (0..25).collect::<Vec<_>>());
        assert_eq!(unpack(vec![vec!['x', 'y']], &[0..2]).unwrap(), ['x', 'y']);
        assert!(unpack(vec![vec![1]], &[0..2]).is_err());
        assert!(unpack(vec![vec![1], vec![2]], &[0..1, 2..3]).is_err());
    }

    #[test]
    fn padding_is_masked() {
        let d = doc(&["a"]);
        let v = Vocab::build(std::slice::from_ref(&d), 20).unwrap();
        let mut p = pack(&d, 0..1, &v, &PackOptions::default()).unwrap();
        p.pad_to(6);
        assert_eq!(p.token_ids[3..], [PAD, PAD, PAD]);
        assert_eq!(p.attention_mask, [true, true, true, false, false, false]);
    }

    proptest! {
        #[test]
        fn bisection_partitions(n in 1usize..=200, threshold in 1usize..=30) {
            let splits = bisect_split(n, threshold);
            prop_assert_eq!(splits[0].start, 0);
            prop_assert_eq!(splits.last().unwrap().end, n);
            for w in splits.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            prop_assert!(splits.iter().all(|r| !r.is_empty() && r.len() <= threshold));
        }

        #[test]
        fn pack_then_unpack_preserves_sentence_order(
            words in proptest::collection::vec(1usize..6, 1..40),
            threshold in 1usize..12,
        ) {
            let sentences: Vec<String> = words
                .iter()
                .enumerate()
                .map(|(i, &w)| vec![format!("s{i}"); w].join(" "))
                .collect();
            let d = Document::new("p", sentences);
            let v = Vocab::build(std::slice::from_ref(&d), 100).unwrap();
            let splits = bisect_split(d.len(), threshold);
            let mut preds = Vec::new();
            for r in &splits {
                let p = pack(&d, r.clone(), &v, &PackOptions::default()).unwrap();
                let seps = p.token_ids.iter().filter(|&&t| t == SEP).count();
                prop_assert_eq!(seps, r.len());
                prop_assert_eq!(p.token_ids[0], CLS);
                // "predict" each sentence by reading the token before its [SEP]
                preds.push(
                    p.sep_positions.iter().map(|&s| v.token(p.token_ids[s - 1]).unwrap().to_string()).collect(),
                );
            }
            let got = unpack(preds, &splits).unwrap();
            let want: Vec<String> = (0..d.len()).map(|i| format!("s{i}")).collect();
            prop_assert_eq!(got, want);
        }
    }
}
