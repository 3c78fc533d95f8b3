//! Whitespace and punctuation tokenizer shared by the encoder, the marker
//! matcher and the feature baseline.

/// Lowercase, split on whitespace, and emit each punctuation character as its
/// own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if is_punct(ch) {
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_string());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

fn is_punct(ch: char) -> bool {
    // apostrophes stay inside words ("don't")
    ch != '\'' && (ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()))
}

/// Number of tokens `tokenize` would produce.
pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}
