//! Tokenization and normalization shared by statistics, BLEU, retrieval and
//! sequence construction.
//!
//! The tokenizer splits on whitespace and emits every character that is
//! neither alphanumeric nor whitespace as a token of its own, so
//! `"Hi, it's 7:30."` becomes `Hi , it ' s 7 : 30 .`.

/// Splits `text` into word and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut start = None;
        for (i, c) in word.char_indices() {
            if c.is_alphanumeric() {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&word[s..i]);
                }
                out.push(&word[i..i + c.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&word[s..]);
        }
    }
    out
}

pub fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

/// Canonical form for value comparison: lowercase, trimmed, internal
/// whitespace runs collapsed to one space.
pub fn normalize_value(value: &str) -> String {
    collapse_whitespace(&value.to_lowercase())
}

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased, tokenized, single-space-joined text. Used for free text fed
/// to the language model and for BLEU.
pub fn lm_text(text: &str) -> String {
    tokenize(&text.to_lowercase()).join(" ")
}

/// Whether `needle` occurs in `haystack` as a contiguous run of whole tokens
/// (both lowercased and tokenized first).
pub fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn lower_tokens(text: &str) -> Vec<String> {
    tokenize(&text.to_lowercase()).into_iter().map(str::to_string).collect()
}
