/// Lowercased word tokenizer: whitespace separates tokens and every
/// punctuation character becomes a token of its own.
///
/// This is the single tokenization entry point used by packing, vocabulary
/// building and ROUGE, so swapping in a subword tokenizer only touches this
/// function.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}
