//! Fuzzy BM25: every query token is expanded to the vocabulary terms within
//! its edit budget, and each expansion contributes its BM25 term score scaled
//! by `1 / (1 + distance)`.

use serde::{Deserialize, Serialize};

use crate::distance::{damerau_levenshtein, fuzzy_budget};
use crate::text::normalize;

use super::bm25::{rank, Bm25Params, ScoredDoc, WeightedTerm};
use super::index::InvertedIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyExpansion {
    pub source_term: String,
    pub matched_term: String,
    pub distance: usize,
    pub weight: f64,
}

impl FuzzyExpansion {
    pub fn new(source_term: impl Into<String>, matched_term: impl Into<String>, distance: usize) -> Self {
        Self {
            source_term: source_term.into(),
            matched_term: matched_term.into(),
            distance,
            weight: expansion_weight(distance),
        }
    }

    pub fn exact(term: impl Into<String>) -> Self {
        let term = term.into();
        Self::new(term.clone(), term, 0)
    }
}

pub fn expansion_weight(distance: usize) -> f64 {
    1.0 / (1.0 + distance as f64)
}

fn expand_ids(index: &InvertedIndex, term: &str) -> Vec<(u32, FuzzyExpansion)> {
    let budget = fuzzy_budget(term.chars().count());
    let mut out: Vec<(u32, FuzzyExpansion)> = if budget == 0 {
        index.term_id(term).map(|id| (id, FuzzyExpansion::exact(term))).into_iter().collect()
    } else {
        index
            .trigrams
            .candidates(term, budget)
            .into_iter()
            .filter_map(|id| {
                let candidate = index.term(id);
                let distance = damerau_levenshtein(term, candidate);
                (distance <= budget).then(|| (id, FuzzyExpansion::new(term, candidate, distance)))
            })
            .collect()
    };
    out.sort_by(|a, b| a.1.distance.cmp(&b.1.distance).then_with(|| a.1.matched_term.cmp(&b.1.matched_term)));
    out
}

/// Vocabulary terms within the edit budget of `term`, sorted by
/// (distance asc, term asc). The exact term, when present, comes first.
pub fn expand_fuzzy_terms(index: &InvertedIndex, term: &str) -> Vec<FuzzyExpansion> {
    expand_ids(index, term).into_iter().map(|(_, e)| e).collect()
}

pub fn search_fuzzy_bm25(index: &InvertedIndex, params: &Bm25Params, query: &str, k: usize) -> Vec<ScoredDoc> {
    let terms: Vec<WeightedTerm> = normalize(query)
        .tokens
        .iter()
        .flat_map(|t| expand_ids(index, t))
        .map(|(term_id, expansion)| WeightedTerm { term_id, expansion })
        .collect();
    rank(index, params, &terms, k)
}
