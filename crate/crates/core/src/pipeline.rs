//! query → retrieve → prompt → generate → parse, with per-stage timings.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationRequest};
use crate::gateway::{RetrievalError, RetrievedContext, Retriever, RetrieverKind};
use crate::prompt::{parse_completion, PromptError, PromptTemplates};
use crate::text::{normalize, NormalizedText};

pub const MIN_CONTEXT_SIZE: usize = 1;
pub const MAX_CONTEXT_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    ZeroShot,
    Rag,
}

impl fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZeroShot => "zero_shot",
            Self::Rag => "rag",
        })
    }
}

impl FromStr for CorrectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_shot" => Ok(Self::ZeroShot),
            "rag" => Ok(Self::Rag),
            other => Err(format!("unknown mode `{other}` (expected zero_shot or rag)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    #[serde(with = "crate::duration_ms", rename = "retrieval_ms")]
    pub retrieval: Duration,
    #[serde(with = "crate::duration_ms", rename = "generation_ms")]
    pub generation: Duration,
    #[serde(with = "crate::duration_ms", rename = "total_ms")]
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub input_query: String,
    pub raw_output: String,
    pub correction: String,
    pub normalized_correction: NormalizedText,
    /// Absent on the zero-shot path.
    pub context: Option<RetrievedContext>,
    pub timings: StageTimings,
    pub backend: String,
    pub retriever: Option<RetrieverKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Request,
    Retrieval,
    Generation,
    Parse,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid request: {0}")]
    Request(String),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("generation failed: {0}")]
    Generation(#[from] BackendError),
    #[error("completion parsing failed: {0}")]
    Parse(#[from] PromptError),
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            Self::Request(_) => Stage::Request,
            Self::Retrieval(_) => Stage::Retrieval,
            Self::Generation(_) => Stage::Generation,
            Self::Parse(_) => Stage::Parse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Retrieved items placed in the prompt, 1–8.
    pub context_size: usize,
    pub max_new_tokens: u32,
    pub temperature: f64,
    /// Upper bound on concurrent backend calls in batch mode.
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { context_size: 4, max_new_tokens: 32, temperature: 0.0, concurrency: 8 }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(MIN_CONTEXT_SIZE..=MAX_CONTEXT_SIZE).contains(&self.context_size) {
            return Err(format!(
                "context_size must be within {MIN_CONTEXT_SIZE}..={MAX_CONTEXT_SIZE}, got {}",
                self.context_size
            ));
        }
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be positive".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err("temperature must be non-negative".into());
        }
        if self.concurrency == 0 {
            return Err("concurrency must be positive".into());
        }
        Ok(())
    }
}

/// Aggregate over one batch run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BatchSummary {
    pub count: usize,
    pub errors: usize,
    #[serde(with = "crate::duration_ms", rename = "wall_ms")]
    pub wall: Duration,
    #[serde(with = "crate::duration_ms", rename = "mean_retrieval_ms")]
    pub mean_retrieval: Duration,
    #[serde(with = "crate::duration_ms", rename = "mean_generation_ms")]
    pub mean_generation: Duration,
}

#[derive(Debug)]
pub struct BatchOutput {
    /// One entry per input query, in input order.
    pub items: Vec<Result<CorrectionResult, PipelineError>>,
    pub summary: BatchSummary,
}

impl BatchOutput {
    pub fn successes(&self) -> impl Iterator<Item = &CorrectionResult> {
        self.items.iter().filter_map(|r| r.as_ref().ok())
    }
}

pub struct Corrector {
    retriever: Arc<Retriever>,
    backend: Arc<dyn Backend>,
    templates: PromptTemplates,
    config: PipelineConfig,
    pool: rayon::ThreadPool,
}

impl fmt::Debug for Corrector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Corrector")
            .field("backend", self.backend.descriptor())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Corrector {
    pub fn new(retriever: Arc<Retriever>, backend: Arc<dyn Backend>, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Request)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.concurrency)
            .thread_name(|i| format!("speller-batch-{i}"))
            .build()
            .map_err(|e| PipelineError::Request(e.to_string()))?;
        Ok(Self { retriever, backend, templates: PromptTemplates::builtin().clone(), config, pool })
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn retriever(&self) -> &Arc<Retriever> {
        &self.retriever
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn request(&self, prompt: String) -> GenerationRequest {
        GenerationRequest::new(prompt)
            .with_max_new_tokens(self.config.max_new_tokens)
            .with_temperature(self.config.temperature)
    }

    pub fn correct(
        &self,
        query: &str,
        mode: CorrectionMode,
        kind: Option<RetrieverKind>,
    ) -> Result<CorrectionResult, PipelineError> {
        let start = Instant::now();
        if query.trim().is_empty() {
            return Err(PipelineError::Request("query must not be empty".into()));
        }

        let (prompt, context) = match mode {
            CorrectionMode::ZeroShot => (self.templates.render_zero_shot(query), None),
            CorrectionMode::Rag => {
                let kind = kind.ok_or_else(|| PipelineError::Request("rag mode requires a retriever".into()))?;
                let context = self.retriever.retrieve(kind, query, self.config.context_size)?;
                (self.templates.render_rag(query, &context), Some(context))
            }
        };

        let generation_start = Instant::now();
        let raw_output = self.backend.generate(&self.request(prompt.text))?;
        let generation = generation_start.elapsed();

        let correction = parse_completion(&raw_output)?;
        let normalized_correction = normalize(&correction);
        let retrieval = context.as_ref().map_or(Duration::ZERO, |c| c.elapsed);
        let retriever = context.as_ref().map(|c| c.retriever);
        Ok(CorrectionResult {
            input_query: query.to_owned(),
            raw_output,
            correction,
            normalized_correction,
            context,
            timings: StageTimings { retrieval, generation, total: start.elapsed() },
            backend: self.backend.descriptor().name.clone(),
            retriever,
        })
    }

    /// Corrects every query, running up to `concurrency` at a time. A failing
    /// item yields an error entry; the batch itself never fails.
    pub fn batch_correct(
        &self,
        queries: &[impl AsRef<str> + Sync],
        mode: CorrectionMode,
        kind: Option<RetrieverKind>,
    ) -> BatchOutput {
        let start = Instant::now();
        let items: Vec<Result<CorrectionResult, PipelineError>> =
            self.pool.install(|| queries.par_iter().map(|q| self.correct(q.as_ref(), mode, kind)).collect());

        let ok: Vec<&CorrectionResult> = items.iter().filter_map(|r| r.as_ref().ok()).collect();
        let mean = |f: fn(&CorrectionResult) -> Duration| {
            if ok.is_empty() {
                Duration::ZERO
            } else {
                ok.iter().map(|r| f(r)).sum::<Duration>() / ok.len() as u32
            }
        };
        let summary = BatchSummary {
            count: items.len(),
            errors: items.len() - ok.len(),
            wall: start.elapsed(),
            mean_retrieval: mean(|r| r.timings.retrieval),
            mean_generation: mean(|r| r.timings.generation),
        };
        BatchOutput { items, summary }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyOverhead {
    /// Mean retrieval time as a percentage of mean generation time.
    pub retrieval_fraction: f64,
    #[serde(with = "crate::duration_ms", rename = "generation_mean_ms")]
    pub generation_mean: Duration,
    #[serde(with = "crate::duration_ms", rename = "retrieval_mean_ms")]
    pub retrieval_mean: Duration,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatencyError {
    #[error("no results to summarize")]
    Empty,
    #[error("latency overhead needs rag results only; found a zero-shot result")]
    MixedMode,
    #[error("mean generation time is zero")]
    ZeroGeneration,
}

/// Retrieval cost relative to generation time, over rag results.
pub fn latency_overhead(results: &[CorrectionResult]) -> Result<LatencyOverhead, LatencyError> {
    if results.is_empty() {
        return Err(LatencyError::Empty);
    }
    if results.iter().any(|r| r.retriever.is_none()) {
        return Err(LatencyError::MixedMode);
    }
    let n = results.len() as f64;
    let retrieval_ns = results.iter().map(|r| r.timings.retrieval.as_nanos() as f64).sum::<f64>() / n;
    let generation_ns = results.iter().map(|r| r.timings.generation.as_nanos() as f64).sum::<f64>() / n;
    if generation_ns == 0.0 {
        return Err(LatencyError::ZeroGeneration);
    }
    Ok(LatencyOverhead {
        retrieval_fraction: 100.0 * retrieval_ns / generation_ns,
        generation_mean: Duration::from_nanos(generation_ns.round() as u64),
        retrieval_mean: Duration::from_nanos(retrieval_ns.round() as u64),
    })
}
