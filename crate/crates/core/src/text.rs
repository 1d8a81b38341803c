//! Text normalization shared by the indexer, the mock corrector and the
//! evaluation metric.
//!
//! Every Unicode punctuation character (general category `P*`) is replaced by
//! a single space, the result is lowercased and then split on Unicode
//! whitespace. Replacing instead of deleting keeps `air-fryer` as two tokens.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

static PUNCTUATION: Lazy<Regex> = Lazy::new(|| Regex::new(r"\p{P}").expect("valid regex"));

/// A normalized token sequence together with its single-space rendering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct NormalizedText {
    pub tokens: Vec<String>,
    pub joined: String,
}

impl NormalizedText {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let joined = tokens.join(" ");
        Self { tokens, joined }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizeOptions {
    /// Lowercase every token. Disable for case-sensitive comparison.
    pub fold_case: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self { fold_case: true }
    }
}

/// Returns true for characters in any Unicode punctuation category.
pub fn is_punctuation(c: char) -> bool {
    let mut buf = [0u8; 4];
    PUNCTUATION.is_match(c.encode_utf8(&mut buf))
}

pub fn strip_punctuation(text: &str) -> String {
    PUNCTUATION.replace_all(text, " ").into_owned()
}

/// Splits `text` into tokens after replacing punctuation with spaces.
/// Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    strip_punctuation(text)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

pub fn normalize(text: &str) -> NormalizedText {
    normalize_with(text, NormalizeOptions::default())
}

pub fn normalize_with(text: &str, options: NormalizeOptions) -> NormalizedText {
    let tokens = tokenize(text)
        .into_iter()
        .map(|t| if options.fold_case { t.to_lowercase() } else { t })
        .collect();
    NormalizedText::from_tokens(tokens)
}
