//! Tokenizer shared by BM25 indexing and the Jaccard diagnostic.

use std::collections::BTreeSet;

/// Lowercases and splits on anything that is not alphanumeric. No stemming,
/// no stopwords.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct terms of `text`.
pub fn term_set(text: &str) -> BTreeSet<String> {
    analyze(text).into_iter().collect()
}
