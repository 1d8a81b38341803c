//! Inverted index with exact BM25 and fuzzy BM25 retrieval.

mod bm25;
mod fuzzy;
mod index;
mod persist;
mod trigram;

use thiserror::Error;

use crate::catalog::DocId;

pub use bm25::{bm25_score, idf, search_bm25, Bm25Params, ScoredDoc};
pub use fuzzy::{expand_fuzzy_terms, expansion_weight, search_fuzzy_bm25, FuzzyExpansion};
pub use index::{build_index, IndexedDoc, InvertedIndex, Posting};
pub use persist::{decode_index, encode_index, load_index, save_index, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty collection")]
    EmptyCollection,
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(DocId),
    #[error("too many documents for one index")]
    TooLarge,
    #[error("unknown doc_id {0}")]
    UnknownDoc(DocId),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("corrupt index file at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("index format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("index i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}
