use std::collections::HashMap;
use std::path::Path;

use super::{tokenize, Document, PackError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token ↔ id mapping. Ids `0..4` are the reserved special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens<I: IntoIterator<Item = String>>(words: I) -> Result<Self, PackError> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(PackError::Vocab(format!("invalid token {tok:?} at id {id}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(PackError::Vocab(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keeps the `cap - 4` most frequent tokens of the corpus; ties in
    /// frequency go to the lexicographically smaller token.
    pub fn build(docs: &[Document], cap: usize) -> Result<Self, PackError> {
        if cap <= RESERVED.len() {
            return Err(PackError::Vocab(format!("cap {cap} leaves no room beyond reserved tokens")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            for s in &doc.sentences {
                for t in tokenize(s) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        for r in RESERVED {
            counts.remove(r);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
        ranked.truncate(cap - RESERVED.len());
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, or [`UNK`] when unseen.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// One non-reserved token per line; line `i` holds id `i + 4`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PackError> {
        Self::from_tokens(text.lines().map(str::to_string))
    }

    pub fn save(&self, path: &Path) -> Result<(), PackError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PackError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(sentences: &[&str]) -> Document {
        Document::new("d", sentences.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn reserved_plus_corpus_tokens() {
        let v = Vocab::build(&[doc(&["x y", "z x"])], 10).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.token(CLS), Some("[CLS]"));
        assert_eq!(v.token(4), Some("x"));
        assert_eq!(v.id("never"), UNK);
    }

    #[test]
    fn frequency_ties_break_lexicographically() {
        let v = Vocab::build(&[doc(&["gamma gamma beta alpha"])], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("gamma"), 4);
        assert_eq!(v.id("alpha"), 5);
        assert_eq!(v.id("beta"), UNK);
    }

    #[test]
    fn cap_must_exceed_reserved() {
        assert!(Vocab::build(&[doc(&["a"])], 4).is_err());
    }

    #[test]
    fn text_format_offsets_ids_by_reserved_count() {
        let v = Vocab::build(&[doc(&["b a a"])], 10).unwrap();
        assert_eq!(v.to_text(), "a\nb\n");
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("b"), 5);
        assert!(Vocab::from_text("a\na\n").is_err());
        assert!(Vocab::from_text("[CLS]\n").is_err());
    }
}
