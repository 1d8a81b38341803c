//! Precision / recall / F1 over `<input, label>` pairs, with brand slices.
//!
//! Strings are compared after [`normalize`]. Per pair:
//!
//! | event | condition                     |
//! |-------|-------------------------------|
//! | TP    | predicted ∧ needed ∧ correct  |
//! | FP    | predicted ∧ ¬correct          |
//! | FN    | needed ∧ ¬correct             |
//! | TN    | ¬needed ∧ ¬predicted          |
//!
//! A wrong change on a query that needed one is both an FP and an FN.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::RetrieverKind;
use crate::pipeline::{latency_overhead, CorrectionMode, Corrector, LatencyOverhead, Stage};
use crate::text::normalize;

/// One labeled evaluation record. On disk: one JSON object per line with
/// `input`, `label`, `has_brand` and optional `brand`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPair {
    #[serde(rename = "input")]
    pub input_query: String,
    #[serde(rename = "label")]
    pub label_query: String,
    #[serde(default)]
    pub has_brand: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
}

impl EvalPair {
    pub fn new(input: impl Into<String>, label: impl Into<String>) -> Self {
        Self { input_query: input.into(), label_query: label.into(), has_brand: false, brand: None }
    }

    pub fn with_brand(mut self, brand: impl Into<String>) -> Self {
        self.has_brand = true;
        self.brand = Some(brand.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairOutcome {
    pub needed: bool,
    pub predicted: bool,
    pub correct: bool,
}

impl PairOutcome {
    pub fn is_tp(&self) -> bool {
        self.predicted && self.needed && self.correct
    }

    pub fn is_fp(&self) -> bool {
        self.predicted && !self.correct
    }

    pub fn is_fn(&self) -> bool {
        self.needed && !self.correct
    }

    pub fn is_tn(&self) -> bool {
        !self.needed && !self.predicted
    }
}

pub fn classify(input: &str, label: &str, output: &str) -> PairOutcome {
    let (input, label, output) = (normalize(input).joined, normalize(label).joined, normalize(output).joined);
    PairOutcome { needed: label != input, predicted: output != input, correct: output == label }
}

pub fn classify_pair(pair: &EvalPair, model_output: &str) -> PairOutcome {
    classify(&pair.input_query, &pair.label_query, model_output)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(counts: Counts) -> Self {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1, counts }
    }
}

pub fn compute_metrics<'a>(outcomes: impl IntoIterator<Item = &'a PairOutcome>) -> Metrics {
    let mut c = Counts::default();
    for o in outcomes {
        c.n += 1;
        c.tp += o.is_tp() as u64;
        c.fp += o.is_fp() as u64;
        c.fn_ += o.is_fn() as u64;
        c.tn += o.is_tn() as u64;
    }
    Metrics::from_counts(c)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slicer {
    All,
    BrandOnly,
    /// Brand pairs whose brand is not in the set. Brands compare in
    /// normalized form; brand pairs with no brand string are left out.
    UnseenBrands(HashSet<String>),
}

impl Slicer {
    pub fn unseen_brands<S: AsRef<str>>(seen: impl IntoIterator<Item = S>) -> Self {
        Self::UnseenBrands(seen.into_iter().map(|b| normalize(b.as_ref()).joined).collect())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::All => "all",
            Self::BrandOnly => "brand",
            Self::UnseenBrands(_) => "unseen_brands",
        }
    }

    pub fn includes(&self, pair: &EvalPair) -> bool {
        match self {
            Self::All => true,
            Self::BrandOnly => pair.has_brand,
            Self::UnseenBrands(seen) => {
                pair.has_brand && pair.brand.as_deref().is_some_and(|b| !seen.contains(&normalize(b).joined))
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{pairs} pairs but {outputs} outputs")]
    Misaligned { pairs: usize, outputs: usize },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn slice_metrics(pairs: &[EvalPair], outputs: &[impl AsRef<str>], slicer: &Slicer) -> Result<Metrics, EvalError> {
    if pairs.len() != outputs.len() {
        return Err(EvalError::Misaligned { pairs: pairs.len(), outputs: outputs.len() });
    }
    let outcomes: Vec<PairOutcome> = pairs
        .iter()
        .zip(outputs)
        .filter(|(p, _)| slicer.includes(p))
        .map(|(p, o)| classify_pair(p, o.as_ref()))
        .collect();
    Ok(compute_metrics(&outcomes))
}

/// Parses line-delimited pair records. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn parse_eval_pairs(content: &str) -> Result<Vec<EvalPair>, EvalError> {
    let mut pairs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| EvalError::Parse { line: i + 1, message };
        let pair: EvalPair = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if pair.input_query.trim().is_empty() {
            return Err(parse_err("`input` must not be empty".into()));
        }
        if pair.label_query.trim().is_empty() {
            return Err(parse_err("`label` must not be empty".into()));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_eval_pairs(path: impl AsRef<Path>) -> Result<Vec<EvalPair>, EvalError> {
    let path = path.as_ref();
    let content =
        fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    parse_eval_pairs(&content)
}

/// Rounds a fraction to a percentage with one decimal.
pub fn percent(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub slice: String,
    pub precision_pct: f64,
    pub recall_pct: f64,
    pub f1_pct: f64,
    pub metrics: Metrics,
}

impl SliceReport {
    fn new(slice: &str, metrics: Metrics) -> Self {
        Self {
            slice: slice.to_owned(),
            precision_pct: percent(metrics.precision),
            recall_pct: percent(metrics.recall),
            f1_pct: percent(metrics.f1),
            metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairFailure {
    /// 0-based position in the dataset.
    pub index: usize,
    pub input: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: CorrectionMode,
    pub retriever: Option<RetrieverKind>,
    pub backend: String,
    pub pairs: usize,
    pub evaluated: usize,
    pub slices: Vec<SliceReport>,
    /// Set when no evaluated pair needed a correction.
    pub no_corrections_required: bool,
    pub failures: Vec<PairFailure>,
    /// Only serialized when requested, so reports stay reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyOverhead>,
    #[serde(skip)]
    pub measured_latency: Option<LatencyOverhead>,
}

impl EvalReport {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&SliceReport> {
        self.slices.iter().find(|s| s.slice == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let retriever = self.retriever.map_or("-", |r| r.as_str());
        let _ = writeln!(out, "mode {}  retriever {}  backend {}", self.mode, retriever, self.backend);
        let _ = writeln!(out, "pairs {}  evaluated {}  errors {}", self.pairs, self.evaluated, self.failures.len());
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>9} {:>7} {:>7} {:>6} {:>6} {:>6} {:>6}",
            "slice", "n", "Precision", "Recall", "F1", "TP", "FP", "FN", "TN"
        );
        for s in &self.slices {
            let c = &s.metrics.counts;
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>9.1} {:>7.1} {:>7.1} {:>6} {:>6} {:>6} {:>6}",
                s.slice, c.n, s.precision_pct, s.recall_pct, s.f1_pct, c.tp, c.fp, c.fn_, c.tn
            );
        }
        if self.no_corrections_required {
            let _ = writeln!(out, "note: no corrections required in this dataset");
        }
        if let Some(l) = self.latency.or(self.measured_latency) {
            let _ = writeln!(
                out,
                "latency: retrieval {:.3} ms, generation {:.3} ms, overhead {:.2}%",
                l.retrieval_mean.as_secs_f64() * 1e3,
                l.generation_mean.as_secs_f64() * 1e3,
                l.retrieval_fraction
            );
        }
        for f in &self.failures {
            let _ = writeln!(out, "error: pair {} ({:?}): {:?} stage: {}", f.index, f.input, f.stage, f.message);
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Brands seen during fine-tuning; enables the `unseen_brands` slice.
    pub seen_brands: Option<HashSet<String>>,
    /// Include latency figures in the serialized report.
    pub with_timings: bool,
}

/// Builds a report from already-produced outputs. `None` marks a failed pair.
pub fn evaluate_outputs(
    pairs: &[EvalPair],
    outputs: &[Option<String>],
    options: &EvalOptions,
) -> Result<(Vec<SliceReport>, bool), EvalError> {
    if pairs.len() != outputs.len() {
        return Err(EvalError::Misaligned { pairs: pairs.len(), outputs: outputs.len() });
    }
    let (ok_pairs, ok_outputs): (Vec<EvalPair>, Vec<&str>) = pairs
        .iter()
        .zip(outputs)
        .filter_map(|(p, o)| o.as_deref().map(|o| (p.clone(), o)))
        .unzip();

    let mut slicers = vec![Slicer::All, Slicer::BrandOnly];
    if let Some(seen) = &options.seen_brands {
        slicers.push(Slicer::unseen_brands(seen));
    }
    let slices = slicers
        .iter()
        .map(|s| slice_metrics(&ok_pairs, &ok_outputs, s).map(|m| SliceReport::new(s.name(), m)))
        .collect::<Result<Vec<_>, _>>()?;
    let none_needed = ok_pairs.iter().all(|p| !classify_pair(p, &p.input_query).needed);
    Ok((slices, none_needed))
}

/// Corrects every pair's input with `corrector` and scores the outputs.
pub fn run_eval(
    pairs: &[EvalPair],
    corrector: &Corrector,
    mode: CorrectionMode,
    kind: Option<RetrieverKind>,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let inputs: Vec<&str> = pairs.iter().map(|p| p.input_query.as_str()).collect();
    let batch = corrector.batch_correct(&inputs, mode, kind);

    let mut failures = Vec::new();
    let mut outputs = Vec::with_capacity(pairs.len());
    for (index, item) in batch.items.iter().enumerate() {
        match item {
            Ok(r) => outputs.push(Some(r.correction.clone())),
            Err(e) => {
                failures.push(PairFailure {
                    index,
                    input: pairs[index].input_query.clone(),
                    stage: e.stage(),
                    message: e.to_string(),
                });
                outputs.push(None);
            }
        }
    }
    let (slices, no_corrections_required) = evaluate_outputs(pairs, &outputs, options)?;
    let results: Vec<_> = batch.successes().cloned().collect();
    let measured = match mode {
        CorrectionMode::Rag => latency_overhead(&results).ok(),
        CorrectionMode::ZeroShot => None,
    };
    Ok(EvalReport {
        mode,
        retriever: if mode == CorrectionMode::Rag { kind } else { None },
        backend: corrector.backend().descriptor().name.clone(),
        pairs: pairs.len(),
        evaluated: pairs.len() - failures.len(),
        slices,
        no_corrections_required,
        failures,
        latency: measured.filter(|_| options.with_timings),
        measured_latency: measured,
    })
}
