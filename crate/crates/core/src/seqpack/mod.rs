//! Turning documents into model inputs: tokenization, vocabulary, joint
//! packing of sentences around delimiter tokens, and sentence-count
//! bisection of long documents.

mod document;
mod pack;
mod tokenize;
mod vocab;

pub use document::Document;
pub use pack::{bisect_split, pack, unpack, Marker, PackOptions, PackedInput};
pub use tokenize::tokenize;
pub use vocab::{Vocab, CLS, PAD, RESERVED, SEP, UNK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("document {doc_id}: sentence {sentence} has no tokens")]
    EmptySentence { doc_id: String, sentence: usize },
    #[error("document {doc_id}: sentence {sentence} truncated to zero tokens (budget {max_tokens})")]
    Truncated {
        doc_id: String,
        sentence: usize,
        max_tokens: usize,
    },
    #[error("document {doc_id}: {needed} tokens exceed the limit of {max_tokens}")]
    TooLong {
        doc_id: String,
        needed: usize,
        max_tokens: usize,
    },
    #[error("document {doc_id}: sentence range {start}..{end} invalid for {len} sentences")]
    Range {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("document {doc_id}: {msg}")]
    Document { doc_id: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
