//! Deterministic nearest-context-token corrector.
//!
//! Stands in for a language model in offline runs. It can only copy spellings
//! it sees in the retrieved context, which makes it a useful lower bound: with
//! no context it never edits anything.

use std::collections::{BTreeSet, HashSet};

use crate::distance::damerau_levenshtein;
use crate::prompt::{extract_fields, TERMINATOR};
use crate::text::normalize;

use super::{Backend, BackendDescriptor, BackendError, GenerationRequest};

/// Largest edit distance the mock will repair for a token of `len` chars.
pub fn mock_budget(len: usize) -> usize {
    match len {
        0..=3 => 0,
        4..=5 => 1,
        _ => 2,
    }
}

fn token_key(token: &str) -> String {
    normalize(token).joined
}

/// One left-to-right pass. Returns the new tokens and whether anything changed.
fn correction_pass(tokens: &[String], vocabulary: &BTreeSet<String>) -> (Vec<String>, bool) {
    let keys: Vec<String> = tokens.iter().map(|t| token_key(t)).collect();
    // Context tokens already spelled out in the query are not correction
    // targets for its other tokens.
    let present: HashSet<&str> = keys.iter().map(String::as_str).collect();

    let mut changed = false;
    let out = tokens
        .iter()
        .zip(&keys)
        .map(|(token, key)| {
            if key.is_empty() || key.contains(' ') || vocabulary.contains(key) {
                return token.clone();
            }
            let budget = mock_budget(key.chars().count());
            if budget == 0 {
                return token.clone();
            }
            let mut best: Option<(&str, usize)> = None;
            let mut tied = false;
            for candidate in vocabulary.iter().filter(|c| !present.contains(c.as_str())) {
                let d = damerau_levenshtein(key, candidate);
                match best {
                    Some((_, bd)) if d > bd => {}
                    Some((_, bd)) if d == bd => tied = true,
                    _ => {
                        best = Some((candidate, d));
                        tied = false;
                    }
                }
            }
            match best {
                Some((candidate, d)) if !tied && (1..=budget).contains(&d) => {
                    changed = true;
                    candidate.to_owned()
                }
                _ => token.clone(),
            }
        })
        .collect();
    (out, changed)
}

/// Replaces each query token with its unique nearest context token when that
/// token is within the edit budget. Ties keep the original. Token count and
/// order are preserved. Passes repeat until nothing changes, so the result is
/// a fixed point: correcting it again with the same context is a no-op.
pub fn mock_correct(query: &str, context_items: &[impl AsRef<str>]) -> String {
    let vocabulary: BTreeSet<String> =
        context_items.iter().flat_map(|item| normalize(item.as_ref()).tokens).collect();
    let mut tokens: Vec<String> = query.split_whitespace().map(str::to_owned).collect();
    if vocabulary.is_empty() {
        return tokens.join(" ");
    }
    loop {
        let (next, changed) = correction_pass(&tokens, &vocabulary);
        tokens = next;
        if !changed {
            return tokens.join(" ");
        }
    }
}

/// Backend that reads the Query and Context fields back out of a rendered
/// prompt and answers with [`mock_correct`].
#[derive(Debug, Clone)]
pub struct MockBackend {
    descriptor: BackendDescriptor,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self { descriptor: BackendDescriptor::mock() }
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let fields = extract_fields(&request.prompt)
            .ok_or_else(|| BackendError::InvalidRequest("prompt has no Query field".into()))?;
        let items: Vec<&str> = fields.context.map(|c| c.split(',').filter(|s| !s.is_empty()).collect()).unwrap_or_default();
        Ok(format!("{}\n{TERMINATOR}", mock_correct(fields.query, &items)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corrects_from_context() {
        let ctx = ["abba patio umbrella", "patio umbrella sunbrella", "sunbrella umbrellas", "hampton bay patio umbrella"];
        assert_eq!(mock_correct("sumbrella umbrella outdoor patio", &ctx), "sunbrella umbrella outdoor patio");
        let ctx = ["mens salomon boots", "salomon snowboard boots", "salomon womens winter boots"];
        assert_eq!(mock_correct("salamin boots", &ctx), "salomon boots");
    }

    #[test]
    fn no_context_no_edits() {
        assert_eq!(mock_correct("salamin boots", &[] as &[&str]), "salamin boots");
    }

    #[test]
    fn ties_keep_original() {
        // "boots" is distance 1 from both candidates.
        assert_eq!(mock_correct("boots", &["boats", "bolts"]), "boots");
    }

    #[test]
    fn exact_context_token_is_kept() {
        assert_eq!(mock_correct("correlle", &["correlle plates white", "corelle"]), "correlle");
    }

    #[test]
    fn short_tokens_are_never_edited() {
        assert_eq!(mock_correct("ne tx", &["nu ty"]), "ne tx");
    }

    #[test]
    fn backend_parses_prompt() {
        let prompt = crate::prompt::PromptTemplates::builtin().render_rag_rendered("salamin boots", "salomon boots,x");
        let out = MockBackend::new().generate(&GenerationRequest::new(prompt.text)).unwrap();
        assert_eq!(out, "salomon boots\n###");

        let prompt = crate::prompt::render_zero_shot_prompt("salamin boots");
        let out = MockBackend::new().generate(&GenerationRequest::new(prompt.text)).unwrap();
        assert_eq!(out, "salamin boots\n###");

        assert!(MockBackend::new().generate(&GenerationRequest::new("hello")).is_err());
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-e]{1,8}"
    }

    proptest! {
        #[test]
        fn idempotent_and_length_preserving(
            query in proptest::collection::vec(word(), 1..6),
            items in proptest::collection::vec(proptest::collection::vec(word(), 1..4), 0..5),
        ) {
            let query = query.join(" ");
            let items: Vec<String> = items.iter().map(|i| i.join(" ")).collect();
            let once = mock_correct(&query, &items);
            prop_assert_eq!(once.split_whitespace().count(), query.split_whitespace().count());
            prop_assert_eq!(mock_correct(&once, &items), once.clone());
            prop_assert_eq!(mock_correct(&query, &items), once);
        }
    }
}
