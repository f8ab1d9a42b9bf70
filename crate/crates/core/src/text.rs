//! Word tokenization shared by card scoring and the reference retrieval
//! clients.

use std::collections::BTreeSet;

/// Lowercased word tokens of `text`, in order. Words are maximal runs of
/// alphanumeric characters and underscores.
pub fn word_list(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct lowercased word tokens of `text`.
pub fn words(text: &str) -> BTreeSet<String> {
    word_list(text).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation() {
        assert_eq!(
            word_list("Transfer expenses.jpg, tap_by_text!"),
            ["transfer", "expenses", "jpg", "tap_by_text"]
        );
        assert!(words("  ").is_empty());
    }
}
