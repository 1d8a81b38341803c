//! Product catalog loading.
//!
//! Two line-oriented formats are accepted:
//!
//! * `tsv`: `doc_id<TAB>text[<TAB>brand]`
//! * `jsonl`: one `{"doc_id": .., "text": .., "brand": ..}` object per line
//!
//! Rows whose text is empty after trimming are skipped and counted, not
//! fatal. Malformed rows and duplicate ids abort the load.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub type DocId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogDocument {
    pub doc_id: DocId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
}

impl CatalogDocument {
    pub fn new(doc_id: DocId, text: impl Into<String>) -> Self {
        Self { doc_id, text: text.into(), brand: None }
    }

    pub fn with_brand(mut self, brand: impl Into<String>) -> Self {
        self.brand = Some(brand.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogFormat {
    #[default]
    Tsv,
    Jsonl,
}

impl FromStr for CatalogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(format!("unknown catalog format `{other}` (expected tsv or jsonl)")),
        }
    }
}

impl fmt::Display for CatalogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tsv => "tsv",
            Self::Jsonl => "jsonl",
        })
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate doc_id {doc_id} (first seen on line {first_line})")]
    DuplicateId { line: usize, doc_id: DocId, first_line: usize },
    #[error("catalog contains no documents")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

/// Result of a catalog load: the accepted documents plus row accounting.
#[derive(Debug, Clone, Default)]
pub struct LoadedCatalog {
    pub documents: Vec<CatalogDocument>,
    pub rejected: Vec<RejectedRow>,
    pub line_count: usize,
}

impl LoadedCatalog {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

pub fn load_catalog(path: impl AsRef<Path>, format: CatalogFormat) -> Result<LoadedCatalog, CatalogError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path)
        .map_err(|source| CatalogError::Io { path: path.display().to_string(), source })?;
    parse_catalog(&content, format)
}

#[derive(Deserialize)]
struct JsonRow {
    doc_id: DocId,
    text: String,
    #[serde(default)]
    brand: Option<String>,
}

pub fn parse_catalog(content: &str, format: CatalogFormat) -> Result<LoadedCatalog, CatalogError> {
    let mut out = LoadedCatalog::default();
    let mut seen: HashMap<DocId, usize> = HashMap::new();

    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        out.line_count += 1;

        if raw.trim().is_empty() {
            out.rejected.push(RejectedRow { line, reason: "blank line".into() });
            continue;
        }

        let row = match format {
            CatalogFormat::Tsv => parse_tsv_row(raw, line)?,
            CatalogFormat::Jsonl => serde_json::from_str::<JsonRow>(raw)
                .map_err(|e| CatalogError::Parse { line, message: e.to_string() })?,
        };

        if row.text.trim().is_empty() {
            warn!(line, doc_id = row.doc_id, "skipping catalog row with empty text");
            out.rejected.push(RejectedRow { line, reason: "empty text".into() });
            continue;
        }

        if let Some(&first_line) = seen.get(&row.doc_id) {
            return Err(CatalogError::DuplicateId { line, doc_id: row.doc_id, first_line });
        }
        seen.insert(row.doc_id, line);

        let brand = row.brand.map(|b| b.trim().to_owned()).filter(|b| !b.is_empty());
        out.documents.push(CatalogDocument { doc_id: row.doc_id, text: row.text.trim().to_owned(), brand });
    }

    if out.documents.is_empty() {
        return Err(CatalogError::Empty);
    }
    Ok(out)
}

fn parse_tsv_row(raw: &str, line: usize) -> Result<JsonRow, CatalogError> {
    let mut fields = raw.split('\t');
    let id_field = fields.next().unwrap_or_default().trim();
    let doc_id = id_field.parse::<DocId>().map_err(|_| CatalogError::Parse {
        line,
        message: format!("invalid doc_id `{id_field}`"),
    })?;
    let text = fields.next().ok_or_else(|| CatalogError::Parse {
        line,
        message: "missing text field".into(),
    })?;
    let brand = fields.next().map(str::to_owned);
    if fields.next().is_some() {
        return Err(CatalogError::Parse { line, message: "too many fields".into() });
    }
    Ok(JsonRow { doc_id, text: text.to_owned(), brand })
}
