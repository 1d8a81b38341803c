//! Fine-tuning data: basic `<input, label>` strings and contextual
//! `<input, context, label>` strings with retrieved context.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::eval::{load_eval_pairs, EvalError, EvalPair};
use crate::gateway::{Retriever, RetrieverKind};
use crate::prompt::{render_training_example, PromptError, PromptVariant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtRecord {
    pub text: String,
    pub input: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_items: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRow {
    pub index: usize,
    pub input: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BuiltDataset {
    pub records: Vec<FtRecord>,
    pub skipped: Vec<SkippedRow>,
}

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error(transparent)]
    Pairs(#[from] EvalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
}

pub fn build_basic(pairs: &[EvalPair]) -> Result<BuiltDataset, FinetuneError> {
    let records = pairs
        .iter()
        .map(|p| {
            let text = render_training_example(PromptVariant::BasicFtTrain, &p.input_query, None, &p.label_query)?;
            Ok(FtRecord { text, input: p.input_query.clone(), label: p.label_query.clone(), context_items: None })
        })
        .collect::<Result<Vec<_>, PromptError>>()?;
    Ok(BuiltDataset { records, skipped: Vec::new() })
}

/// Retrieves context for each pair's input query. Rows whose retrieval fails
/// are skipped and reported; output order follows input order.
pub fn build_contextual(
    pairs: &[EvalPair],
    retriever: &Retriever,
    kind: RetrieverKind,
    k: usize,
) -> Result<BuiltDataset, FinetuneError> {
    if k == 0 {
        return Err(FinetuneError::InvalidK);
    }
    let rows: Vec<Result<FtRecord, String>> = pairs
        .par_iter()
        .map(|p| {
            let ctx = retriever.retrieve(kind, &p.input_query, k).map_err(|e| e.to_string())?;
            let text = render_training_example(
                PromptVariant::ContextualFtTrain,
                &p.input_query,
                Some(&ctx.rendered),
                &p.label_query,
            )
            .map_err(|e| e.to_string())?;
            Ok(FtRecord { text, input: p.input_query.clone(), label: p.label_query.clone(), context_items: Some(ctx.items) })
        })
        .collect();

    let mut out = BuiltDataset::default();
    for (index, row) in rows.into_iter().enumerate() {
        match row {
            Ok(r) => out.records.push(r),
            Err(reason) => {
                warn!(index, %reason, "skipping row");
                out.skipped.push(SkippedRow { index, input: pairs[index].input_query.clone(), reason });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// One JSON record per line.
    #[default]
    Jsonl,
    /// Bare training strings separated by a blank line.
    Plain,
}

pub fn write_records(records: &[FtRecord], format: OutputFormat, mut out: impl Write) -> io::Result<()> {
    match format {
        OutputFormat::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
        OutputFormat::Plain => {
            for (i, r) in records.iter().enumerate() {
                if i > 0 {
                    out.write_all(b"\n\n")?;
                }
                out.write_all(r.text.as_bytes())?;
            }
            if !records.is_empty() {
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()
}

pub fn read_records(content: &str) -> Result<Vec<FtRecord>, EvalError> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

/// Sidecar metadata written next to every dataset as `<out>.meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub variant: PromptVariant,
    pub format: OutputFormat,
    pub retriever: Option<RetrieverKind>,
    pub k: Option<usize>,
    pub records: usize,
    pub skipped: usize,
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Debug, Clone)]
pub enum DatasetSpec<'a> {
    Basic,
    Contextual { retriever: &'a Retriever, kind: RetrieverKind, k: usize },
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), FinetuneError> {
    let io_err = |source| FinetuneError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    write(&mut w).map_err(io_err)
}

/// Reads pairs from `pairs_path`, writes the dataset to `out_path` and its
/// metadata alongside.
pub fn build_dataset_file(
    pairs_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    spec: DatasetSpec<'_>,
    format: OutputFormat,
) -> Result<DatasetMeta, FinetuneError> {
    let pairs = load_eval_pairs(pairs_path)?;
    let (built, meta) = match spec {
        DatasetSpec::Basic => {
            let built = build_basic(&pairs)?;
            let meta = (PromptVariant::BasicFtTrain, None, None);
            (built, meta)
        }
        DatasetSpec::Contextual { retriever, kind, k } => {
            (build_contextual(&pairs, retriever, kind, k)?, (PromptVariant::ContextualFtTrain, Some(kind), Some(k)))
        }
    };
    let out_path = out_path.as_ref();
    write_file(out_path, |w| write_records(&built.records, format, w))?;
    let meta = DatasetMeta {
        variant: meta.0,
        format,
        retriever: meta.1,
        k: meta.2,
        records: built.records.len(),
        skipped: built.skipped.len(),
    };
    write_file(&meta_path(out_path), |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        w.write_all(b"\n")
    })?;
    Ok(meta)
}

/// Returns the record count.
pub fn build_basic_dataset(pairs_path: impl AsRef<Path>, out_path: impl AsRef<Path>) -> Result<usize, FinetuneError> {
    build_dataset_file(pairs_path, out_path, DatasetSpec::Basic, OutputFormat::Jsonl).map(|m| m.records)
}

/// Returns the record count.
pub fn build_contextual_dataset(
    pairs_path: impl AsRef<Path>,
    retriever: &Retriever,
    kind: RetrieverKind,
    k: usize,
    out_path: impl AsRef<Path>,
) -> Result<usize, FinetuneError> {
    build_dataset_file(pairs_path, out_path, DatasetSpec::Contextual { retriever, kind, k }, OutputFormat::Jsonl)
        .map(|m| m.records)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::catalog::CatalogDocument;
    use crate::prompt::extract_label;
    use crate::sparse::{build_index, Bm25Params};

    fn retriever() -> Retriever {
        let mut docs = vec![
            CatalogDocument::new(1, "swarovski snowflake necklace for women"),
            CatalogDocument::new(2, "silver necklace"),
        ];
        docs.extend((10..20).map(|i| CatalogDocument::new(i, format!("pendant charm {i}"))));
        Retriever::new(Bm25Params::default()).with_index(Arc::new(build_index(&docs).unwrap()))
    }

    #[test]
    fn basic_records_have_one_terminator() {
        let pairs = vec![EvalPair::new("salamin boots", "salomon boots"), EvalPair::new("lamp", "lamp")];
        let built = build_basic(&pairs).unwrap();
        assert_eq!(built.records.len(), 2);
        for (r, p) in built.records.iter().zip(&pairs) {
            assert_eq!(r.text.matches("\n###").count(), 3);
            assert!(r.text.ends_with(&format!("### Correction:\n{}\n###", p.label_query)));
            assert_eq!(extract_label(&r.text), Some(p.label_query.as_str()));
        }
    }

    #[test]
    fn contextual_uses_input_query() {
        let pairs = vec![EvalPair::new("snowflake necklace for women", "swarovski snowflake necklace for women")];
        let built = build_contextual(&pairs, &retriever(), RetrieverKind::FuzzyBm25, 4).unwrap();
        let r = &built.records[0];
        let items = r.context_items.as_ref().unwrap();
        assert!(items.contains(&"swarovski snowflake necklace for women".to_string()));
        assert_eq!(extract_label(&r.text), Some("swarovski snowflake necklace for women"));
    }

    #[test]
    fn contextual_caps_and_empty_context() {
        let pairs = vec![EvalPair::new("pendant charm", "pendant charm"), EvalPair::new("qqqq", "qqqq")];
        let built = build_contextual(&pairs, &retriever(), RetrieverKind::Bm25, 4).unwrap();
        assert_eq!(built.records[0].context_items.as_ref().unwrap().len(), 4);
        assert!(built.records[1].context_items.as_ref().unwrap().is_empty());
        assert!(built.records[1].text.contains("### Context:\n\n### Query:\nqqqq\n"));
    }

    #[test]
    fn retrieval_failures_are_skipped() {
        let pairs = vec![EvalPair::new("a", "a")];
        let bare = Retriever::new(Bm25Params::default());
        let built = build_contextual(&pairs, &bare, RetrieverKind::Bm25, 4).unwrap();
        assert!(built.records.is_empty());
        assert_eq!(built.skipped.len(), 1);
        assert!(matches!(build_contextual(&pairs, &bare, RetrieverKind::Bm25, 0), Err(FinetuneError::InvalidK)));
    }

    #[test]
    fn file_round_trip_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = dir.path().join("pairs.jsonl");
        fs::write(&pairs, "{\"input\":\"salamin boots\",\"label\":\"salomon boots\"}\n").unwrap();
        let out = dir.path().join("basic.jsonl");
        assert_eq!(build_basic_dataset(&pairs, &out).unwrap(), 1);
        let records = read_records(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(records[0].label, "salomon boots");
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(&out)).unwrap()).unwrap();
        assert_eq!(meta.records, 1);
        assert_eq!(meta.variant, PromptVariant::BasicFtTrain);

        let out = dir.path().join("ctx.jsonl");
        assert_eq!(build_contextual_dataset(&pairs, &retriever(), RetrieverKind::FuzzyBm25, 2, &out).unwrap(), 1);
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(&out)).unwrap()).unwrap();
        assert_eq!((meta.retriever, meta.k), (Some(RetrieverKind::FuzzyBm25), Some(2)));

        let empty = dir.path().join("empty.jsonl");
        fs::write(&empty, "").unwrap();
        assert_eq!(build_basic_dataset(&empty, dir.path().join("e.jsonl")).unwrap(), 0);
    }

    #[test]
    fn plain_format() {
        let built = build_basic(&[EvalPair::new("a b", "a b"), EvalPair::new("c d", "c d")]).unwrap();
        let mut buf = Vec::new();
        write_records(&built.records, OutputFormat::Plain, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let parts: Vec<&str> = s.trim_end_matches('\n').split("\n\n").collect();
        assert_eq!(parts, vec![built.records[0].text.as_str(), built.records[1].text.as_str()]);
    }
}
