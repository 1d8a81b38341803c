//! Uniform retrieval over the sparse index and the remote dense sidecar, and
//! rendering of retrieved items into the prompt's context field.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::sparse::{search_bm25, search_fuzzy_bm25, Bm25Params, InvertedIndex, ScoredDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Bm25,
    FuzzyBm25,
    DenseRemote,
}

impl RetrieverKind {
    pub const ALL: [RetrieverKind; 3] = [Self::Bm25, Self::FuzzyBm25, Self::DenseRemote];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Bm25 => "bm25",
            Self::FuzzyBm25 => "fuzzy_bm25",
            Self::DenseRemote => "dense_remote",
        }
    }
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RetrieverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown retriever `{s}` (expected bm25, fuzzy_bm25 or dense_remote)"))
    }
}

/// Ranked catalog strings for one query plus their prompt rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub items: Vec<String>,
    pub rendered: String,
    pub retriever: RetrieverKind,
    #[serde(with = "crate::duration_ms")]
    pub elapsed: Duration,
}

impl RetrievedContext {
    pub fn new(items: Vec<String>, retriever: RetrieverKind, elapsed: Duration) -> Self {
        let rendered = render_context(&items);
        Self { items, rendered, retriever, elapsed }
    }
}

/// Joins items with a bare comma. Duplicates are kept.
pub fn render_context(items: &[impl AsRef<str>]) -> String {
    items.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("retriever {0} is not initialized")]
    Uninitialized(RetrieverKind),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("dense sidecar unreachable: {0}")]
    SidecarUnreachable(String),
    #[error("dense sidecar returned HTTP {0}")]
    SidecarStatus(u16),
    #[error("dense sidecar protocol error: {0}")]
    SidecarProtocol(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenseSearchRequest<'a> {
    query: &'a str,
    k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseItem {
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSearchResponse {
    pub items: Vec<DenseItem>,
}

pub const DEFAULT_DENSE_TIMEOUT: Duration = Duration::from_secs(2);

/// Client for the dense sidecar's `POST /search`. Timeouts fail fast with no
/// retry.
#[derive(Clone)]
pub struct DenseClient {
    base_url: String,
    agent: ureq::Agent,
}

impl fmt::Debug for DenseClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseClient").field("base_url", &self.base_url).finish()
    }
}

impl DenseClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { base_url: base_url.into().trim_end_matches('/').to_owned(), agent }
    }

    pub fn search(&self, query: &str, k: usize) -> Result<Vec<DenseItem>, RetrievalError> {
        let url = format!("{}/search", self.base_url);
        let response = self.agent.post(&url).send_json(DenseSearchRequest { query, k }).map_err(|e| match e {
            ureq::Error::Status(code, _) => RetrievalError::SidecarStatus(code),
            ureq::Error::Transport(t) => RetrievalError::SidecarUnreachable(t.to_string()),
        })?;
        let body: DenseSearchResponse = response.into_json().map_err(|e| {
            if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                RetrievalError::SidecarUnreachable(e.to_string())
            } else {
                RetrievalError::SidecarProtocol(e.to_string())
            }
        })?;
        let mut items = body.items;
        items.truncate(k);
        Ok(items)
    }
}

/// Dispatches retrieval requests to the configured backends. Holds only
/// immutable state apart from call counters.
#[derive(Debug, Default)]
pub struct Retriever {
    index: Option<Arc<InvertedIndex>>,
    params: Bm25Params,
    dense: Option<DenseClient>,
    dense_fallback: bool,
    calls: AtomicU64,
}

impl Retriever {
    pub fn new(params: Bm25Params) -> Self {
        Self { params, ..Self::default() }
    }

    pub fn with_index(mut self, index: Arc<InvertedIndex>) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_dense(mut self, client: DenseClient) -> Self {
        self.dense = Some(client);
        self
    }

    /// When set, an unreachable dense sidecar falls back to fuzzy BM25.
    pub fn with_dense_fallback(mut self, enabled: bool) -> Self {
        self.dense_fallback = enabled;
        self
    }

    pub fn index(&self) -> Option<&Arc<InvertedIndex>> {
        self.index.as_ref()
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    /// Number of retrieval calls served so far.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Scored sparse retrieval, for callers that need scores and provenance.
    pub fn search_sparse(&self, kind: RetrieverKind, query: &str, k: usize) -> Result<Vec<ScoredDoc>, RetrievalError> {
        let index = self.index.as_ref().ok_or(RetrievalError::Uninitialized(kind))?;
        Ok(match kind {
            RetrieverKind::Bm25 => search_bm25(index, &self.params, query, k),
            RetrieverKind::FuzzyBm25 => search_fuzzy_bm25(index, &self.params, query, k),
            RetrieverKind::DenseRemote => return Err(RetrievalError::Uninitialized(kind)),
        })
    }

    fn sparse_texts(&self, kind: RetrieverKind, query: &str, k: usize) -> Result<Vec<String>, RetrievalError> {
        let index = self.index.as_ref().ok_or(RetrievalError::Uninitialized(kind))?;
        let hits = self.search_sparse(kind, query, k)?;
        Ok(hits
            .into_iter()
            .map(|h| index.document(h.doc_id).map(|d| d.text.clone()).unwrap_or_default())
            .collect())
    }

    /// Top-`k` catalog texts for `query`, in backend rank order. `elapsed`
    /// covers the backend call only.
    pub fn retrieve(&self, kind: RetrieverKind, query: &str, k: usize) -> Result<RetrievedContext, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        match kind {
            RetrieverKind::Bm25 | RetrieverKind::FuzzyBm25 => {
                let items = self.sparse_texts(kind, query, k)?;
                Ok(RetrievedContext::new(items, kind, start.elapsed()))
            }
            RetrieverKind::DenseRemote => {
                let client = self.dense.as_ref().ok_or(RetrievalError::Uninitialized(kind))?;
                match client.search(query, k) {
                    Ok(items) => {
                        let elapsed = start.elapsed();
                        Ok(RetrievedContext::new(items.into_iter().map(|i| i.text).collect(), kind, elapsed))
                    }
                    Err(RetrievalError::SidecarUnreachable(reason)) if self.dense_fallback && self.index.is_some() => {
                        warn!(%reason, "dense sidecar unreachable, falling back to fuzzy_bm25");
                        let start = Instant::now();
                        let items = self.sparse_texts(RetrieverKind::FuzzyBm25, query, k)?;
                        Ok(RetrievedContext::new(items, RetrieverKind::FuzzyBm25, start.elapsed()))
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }
}
