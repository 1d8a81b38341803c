//! Okapi BM25 with the non-negative idf variant
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::catalog::DocId;
use crate::text::normalize;

use super::fuzzy::FuzzyExpansion;
use super::index::{InvertedIndex, Posting};
use super::IndexError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    /// Term-frequency saturation, > 0.
    pub k1: f64,
    /// Length normalization, in [0, 1].
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        let params = Self { k1, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(IndexError::InvalidParams(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::InvalidParams(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: DocId,
    pub score: f64,
    pub matched_terms: Vec<FuzzyExpansion>,
}

pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

impl InvertedIndex {
    /// Contribution of one posting to a document's score.
    pub(crate) fn posting_score(&self, params: &Bm25Params, df: usize, posting: &Posting) -> f64 {
        let tf = posting.tf as f64;
        let len = self.doc_at(posting.doc).length as f64;
        let norm = if self.avg_doc_length > 0.0 { len / self.avg_doc_length } else { 0.0 };
        idf(self.doc_count(), df) * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
    }
}

/// BM25 score of one document for already-normalized `query_terms`.
pub fn bm25_score(
    index: &InvertedIndex,
    params: &Bm25Params,
    query_terms: &[impl AsRef<str>],
    doc_id: DocId,
) -> Result<f64, IndexError> {
    let ordinal = index.ordinal_of(doc_id).ok_or(IndexError::UnknownDoc(doc_id))?;
    let mut score = 0.0;
    for term in query_terms {
        let Some(list) = index.postings_for(term.as_ref()) else { continue };
        if let Ok(pos) = list.binary_search_by_key(&ordinal, |p| p.doc) {
            score += index.posting_score(params, list.len(), &list[pos]);
        }
    }
    Ok(score)
}

/// One weighted vocabulary term to score for a query token.
pub(crate) struct WeightedTerm {
    pub term_id: u32,
    pub expansion: FuzzyExpansion,
}

/// Accumulates `weight * posting score` per document, in the given term
/// order, and returns the top `k` by (score desc, doc_id asc).
pub(crate) fn rank(index: &InvertedIndex, params: &Bm25Params, terms: &[WeightedTerm], k: usize) -> Vec<ScoredDoc> {
    let mut scores: HashMap<u32, f64> = HashMap::new();
    for wt in terms {
        let list = index.postings_by_id(wt.term_id);
        for posting in list {
            *scores.entry(posting.doc).or_insert(0.0) += wt.expansion.weight * index.posting_score(params, list.len(), posting);
        }
    }

    let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);

    ranked
        .into_iter()
        .map(|(ordinal, score)| {
            let matched_terms = terms
                .iter()
                .filter(|wt| index.postings_by_id(wt.term_id).binary_search_by_key(&ordinal, |p| p.doc).is_ok())
                .map(|wt| wt.expansion.clone())
                .collect();
            ScoredDoc { doc_id: index.doc_at(ordinal).doc_id, score, matched_terms }
        })
        .collect()
}

/// Exact-term BM25 retrieval. Documents with no matching term are never
/// returned, so fewer than `k` results are possible.
pub fn search_bm25(index: &InvertedIndex, params: &Bm25Params, query: &str, k: usize) -> Vec<ScoredDoc> {
    let terms: Vec<WeightedTerm> = normalize(query)
        .tokens
        .into_iter()
        .filter_map(|t| {
            index.term_id(&t).map(|term_id| WeightedTerm { term_id, expansion: FuzzyExpansion::exact(t) })
        })
        .collect();
    rank(index, params, &terms, k)
}
