use std::collections::{BTreeMap, HashMap};

use crate::catalog::{CatalogDocument, DocId};
use crate::text::normalize;

use super::trigram::TrigramIndex;
use super::IndexError;

/// One entry of a postings list. `doc` is the document's ordinal in the
/// index; ordinals follow ascending `doc_id`, so sorting by ordinal is
/// sorting by `doc_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedDoc {
    pub doc_id: DocId,
    /// Token count of the normalized text.
    pub length: u32,
    /// Catalog text, verbatim.
    pub text: String,
}

/// Term → postings map with the per-document statistics BM25 needs.
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    pub(crate) docs: Vec<IndexedDoc>,
    pub(crate) terms: Vec<String>,
    pub(crate) postings: Vec<Vec<Posting>>,
    pub(crate) term_lookup: HashMap<String, u32>,
    pub(crate) trigrams: TrigramIndex,
    pub(crate) avg_doc_length: f64,
}

impl InvertedIndex {
    /// Indexes `docs`. Text is normalized here; the stored text stays verbatim.
    pub fn build(docs: &[CatalogDocument]) -> Result<Self, IndexError> {
        if docs.is_empty() {
            return Err(IndexError::EmptyCollection);
        }
        let mut sorted: Vec<&CatalogDocument> = docs.iter().collect();
        sorted.sort_by_key(|d| d.doc_id);
        if let Some(w) = sorted.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
            return Err(IndexError::DuplicateDocId(w[0].doc_id));
        }
        if sorted.len() > u32::MAX as usize {
            return Err(IndexError::TooLarge);
        }

        let mut indexed = Vec::with_capacity(sorted.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (ordinal, doc) in sorted.iter().enumerate() {
            let tokens = normalize(&doc.text).tokens;
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings
                    .entry(term.to_owned())
                    .or_default()
                    .push(Posting { doc: ordinal as u32, tf: count });
            }
            indexed.push(IndexedDoc { doc_id: doc.doc_id, length: tokens.len() as u32, text: doc.text.clone() });
        }

        let (terms, postings): (Vec<String>, Vec<Vec<Posting>>) = postings.into_iter().unzip();
        Ok(Self::from_parts(indexed, terms, postings))
    }

    /// Assembles an index from already-validated parts, deriving the lookup
    /// tables. `terms` must be sorted and unique.
    pub(crate) fn from_parts(docs: Vec<IndexedDoc>, terms: Vec<String>, postings: Vec<Vec<Posting>>) -> Self {
        let term_lookup = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let trigrams = TrigramIndex::build(&terms);
        let total: u64 = docs.iter().map(|d| d.length as u64).sum();
        let avg_doc_length = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Self { docs, terms, postings, term_lookup, trigrams, avg_doc_length }
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    /// Vocabulary in ascending order.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.term_lookup.contains_key(term)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings_for(term).map_or(0, <[Posting]>::len)
    }

    pub fn postings_for(&self, term: &str) -> Option<&[Posting]> {
        self.term_lookup.get(term).map(|&id| self.postings[id as usize].as_slice())
    }

    pub fn documents(&self) -> &[IndexedDoc] {
        &self.docs
    }

    pub(crate) fn doc_at(&self, ordinal: u32) -> &IndexedDoc {
        &self.docs[ordinal as usize]
    }

    pub(crate) fn ordinal_of(&self, doc_id: DocId) -> Option<u32> {
        self.docs.binary_search_by_key(&doc_id, |d| d.doc_id).ok().map(|i| i as u32)
    }

    pub fn document(&self, doc_id: DocId) -> Option<&IndexedDoc> {
        self.ordinal_of(doc_id).map(|o| self.doc_at(o))
    }

    pub fn term_frequency(&self, term: &str, doc_id: DocId) -> u32 {
        let (Some(ordinal), Some(list)) = (self.ordinal_of(doc_id), self.postings_for(term)) else {
            return 0;
        };
        list.binary_search_by_key(&ordinal, |p| p.doc).map_or(0, |i| list[i].tf)
    }

    pub(crate) fn term_id(&self, term: &str) -> Option<u32> {
        self.term_lookup.get(term).copied()
    }

    pub(crate) fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub(crate) fn postings_by_id(&self, id: u32) -> &[Posting] {
        &self.postings[id as usize]
    }
}

pub fn build_index(docs: &[CatalogDocument]) -> Result<InvertedIndex, IndexError> {
    InvertedIndex::build(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> InvertedIndex {
        build_index(&[CatalogDocument::new(1, "air fryer"), CatalogDocument::new(2, "cuisinart air fryer")]).unwrap()
    }

    #[test]
    fn toy_statistics() {
        let idx = toy();
        assert_eq!(idx.doc_count(), 2);
        assert_eq!(idx.vocabulary().collect::<Vec<_>>(), vec!["air", "cuisinart", "fryer"]);
        assert_eq!(idx.document_frequency("air"), 2);
        assert_eq!(idx.document_frequency("cuisinart"), 1);
        assert_eq!(idx.document_frequency("absent"), 0);
        assert!((idx.avg_doc_length() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn single_doc() {
        let idx = build_index(&[CatalogDocument::new(9, "denman")]).unwrap();
        assert_eq!(idx.avg_doc_length(), 1.0);
        assert_eq!(idx.postings_for("denman").unwrap(), &[Posting { doc: 0, tf: 1 }]);
    }

    #[test]
    fn empty_and_duplicate_rejected() {
        assert!(matches!(build_index(&[]), Err(IndexError::EmptyCollection)));
        let dup = [CatalogDocument::new(1, "a"), CatalogDocument::new(1, "b")];
        assert!(matches!(build_index(&dup), Err(IndexError::DuplicateDocId(1))));
    }

    #[test]
    fn postings_sorted_by_doc_id_regardless_of_input_order() {
        let idx = build_index(&[
            CatalogDocument::new(30, "boots boots"),
            CatalogDocument::new(10, "salomon boots"),
            CatalogDocument::new(20, "mens salomon boots"),
        ])
        .unwrap();
        let ids: Vec<DocId> =
            idx.postings_for("boots").unwrap().iter().map(|p| idx.doc_at(p.doc).doc_id).collect();
        assert_eq!(ids, vec![10, 20, 30]);
        assert_eq!(idx.term_frequency("boots", 30), 2);
        assert_eq!(idx.document(20).unwrap().text, "mens salomon boots");
    }

    #[test]
    fn text_is_normalized_for_indexing_only() {
        let idx = build_index(&[CatalogDocument::new(1, "Cuisinart Air-Fryer!")]).unwrap();
        assert!(idx.contains_term("cuisinart"));
        assert!(idx.contains_term("fryer"));
        assert_eq!(idx.document(1).unwrap().text, "Cuisinart Air-Fryer!");
        assert_eq!(idx.document(1).unwrap().length, 3);
    }
}
