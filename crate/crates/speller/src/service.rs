//! HTTP surface: `POST /v1/correct`, `GET /v1/health`, `GET /v1/metrics`.

use std::collections::VecDeque;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{Map, Value};
use speller_core::backend::BackendError;
use speller_core::gateway::RetrieverKind;
use speller_core::pipeline::{CorrectionMode, CorrectionResult, Corrector, PipelineError};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tracing::{debug, info};

const MAX_QUERY_CHARS: usize = 1024;
const LATENCY_WINDOW: usize = 8192;

/// Defaults applied when a request omits `mode` or `retriever`.
#[derive(Debug, Clone, Copy)]
pub struct RequestDefaults {
    pub mode: CorrectionMode,
    pub retriever: RetrieverKind,
}

impl Default for RequestDefaults {
    fn default() -> Self {
        Self { mode: CorrectionMode::Rag, retriever: RetrieverKind::FuzzyBm25 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectRequest {
    pub query: String,
    pub mode: CorrectionMode,
    pub retriever: Option<RetrieverKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl FieldError {
    fn body(message: impl Into<String>) -> Self {
        Self { error: message.into(), field: None }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        Self { error: message.into(), field: Some(field.to_owned()) }
    }
}

fn optional_str<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<Option<&'a str>, FieldError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(FieldError::field(field, format!("`{field}` must be a string"))),
    }
}

pub fn parse_correct_request(body: &[u8], defaults: RequestDefaults) -> Result<CorrectRequest, FieldError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| FieldError::body(format!("body is not valid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(FieldError::body("body must be a JSON object"));
    };
    if let Some(unknown) = obj.keys().find(|k| !matches!(k.as_str(), "query" | "mode" | "retriever")) {
        return Err(FieldError::field(unknown, format!("unknown field `{unknown}`")));
    }

    let query = optional_str(&obj, "query")?.ok_or_else(|| FieldError::field("query", "`query` is required"))?;
    if query.trim().is_empty() {
        return Err(FieldError::field("query", "`query` must not be empty"));
    }
    if query.chars().count() > MAX_QUERY_CHARS {
        return Err(FieldError::field("query", format!("`query` exceeds {MAX_QUERY_CHARS} characters")));
    }
    let mode = match optional_str(&obj, "mode")? {
        Some(m) => m.parse().map_err(|e: String| FieldError::field("mode", e))?,
        None => defaults.mode,
    };
    let retriever = match optional_str(&obj, "retriever")? {
        Some(r) => Some(r.parse().map_err(|e: String| FieldError::field("retriever", e))?),
        None => Some(defaults.retriever),
    };
    Ok(CorrectRequest {
        query: query.to_owned(),
        mode,
        retriever: if mode == CorrectionMode::Rag { retriever } else { None },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Most recent samples of one latency, in milliseconds.
#[derive(Debug, Default)]
struct LatencyWindow {
    samples: Mutex<(u64, VecDeque<f64>)>,
}

impl LatencyWindow {
    fn record(&self, d: Duration) {
        let mut guard = self.samples.lock().expect("latency lock");
        guard.0 += 1;
        if guard.1.len() == LATENCY_WINDOW {
            guard.1.pop_front();
        }
        guard.1.push_back(d.as_secs_f64() * 1e3);
    }

    fn summary(&self) -> LatencySummary {
        let (count, mut v) = {
            let guard = self.samples.lock().expect("latency lock");
            (guard.0, guard.1.iter().copied().collect::<Vec<f64>>())
        };
        if v.is_empty() {
            return LatencySummary { count, mean_ms: 0.0, p50_ms: 0.0, p99_ms: 0.0, max_ms: 0.0 };
        }
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        LatencySummary {
            count,
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p50_ms: rank(0.50),
            p99_ms: rank(0.99),
            max_ms: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Default)]
pub struct ServiceMetrics {
    requests: AtomicU64,
    client_errors: AtomicU64,
    server_errors: AtomicU64,
    in_flight: AtomicU64,
    retrieval: LatencyWindow,
    generation: LatencyWindow,
    handler: LatencyWindow,
    overhead: LatencyWindow,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageLatencies {
    pub retrieval: LatencySummary,
    pub generation: LatencySummary,
    pub handler: LatencySummary,
    /// Handler time minus the backend call.
    pub handler_overhead: LatencySummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub errors: u64,
    pub client_errors: u64,
    pub server_errors: u64,
    pub in_flight: u64,
    pub latency: StageLatencies,
}

impl ServiceMetrics {
    pub fn snapshot(&self) -> MetricsSnapshot {
        let client_errors = self.client_errors.load(Ordering::Relaxed);
        let server_errors = self.server_errors.load(Ordering::Relaxed);
        MetricsSnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            errors: client_errors + server_errors,
            client_errors,
            server_errors,
            in_flight: self.in_flight.load(Ordering::Relaxed),
            latency: StageLatencies {
                retrieval: self.retrieval.summary(),
                generation: self.generation.summary(),
                handler: self.handler.summary(),
                handler_overhead: self.overhead.summary(),
            },
        }
    }
}

pub struct AppState {
    corrector: Arc<Corrector>,
    defaults: RequestDefaults,
    permits: Semaphore,
    metrics: ServiceMetrics,
}

impl AppState {
    pub fn new(corrector: Arc<Corrector>, defaults: RequestDefaults, max_in_flight: usize) -> Arc<Self> {
        Arc::new(Self { corrector, defaults, permits: Semaphore::new(max_in_flight.max(1)), metrics: ServiceMetrics::default() })
    }

    pub fn metrics(&self) -> &ServiceMetrics {
        &self.metrics
    }
}

#[derive(Debug, Serialize)]
struct Timings {
    retrieval_ms: f64,
    generation_ms: f64,
    total_ms: f64,
    handler_ms: f64,
}

#[derive(Debug, Serialize)]
struct CorrectResponse {
    query: String,
    correction: String,
    raw_output: String,
    mode: CorrectionMode,
    retriever: Option<RetrieverKind>,
    context: Option<Vec<String>>,
    backend: String,
    timings: Timings,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl CorrectResponse {
    fn new(r: CorrectionResult, mode: CorrectionMode, handler: Duration) -> Self {
        Self {
            timings: Timings {
                retrieval_ms: ms(r.timings.retrieval),
                generation_ms: ms(r.timings.generation),
                total_ms: ms(r.timings.total),
                handler_ms: ms(handler),
            },
            query: r.input_query,
            correction: r.correction,
            raw_output: r.raw_output,
            mode,
            retriever: r.retriever,
            context: r.context.map(|c| c.items),
            backend: r.backend,
        }
    }
}

fn error_status(err: &PipelineError) -> StatusCode {
    match err {
        PipelineError::Request(_) => StatusCode::BAD_REQUEST,
        PipelineError::Retrieval(_) => StatusCode::SERVICE_UNAVAILABLE,
        PipelineError::Generation(BackendError::DeadlineExceeded(_)) => StatusCode::GATEWAY_TIMEOUT,
        PipelineError::Generation(_) | PipelineError::Parse(_) => StatusCode::BAD_GATEWAY,
    }
}

struct InFlight<'a>(&'a AtomicU64);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::Relaxed);
    }
}

async fn correct(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let start = Instant::now();
    let m = &state.metrics;
    m.requests.fetch_add(1, Ordering::Relaxed);
    m.in_flight.fetch_add(1, Ordering::Relaxed);
    let _in_flight = InFlight(&m.in_flight);

    let request = match parse_correct_request(&body, state.defaults) {
        Ok(r) => r,
        Err(e) => {
            m.client_errors.fetch_add(1, Ordering::Relaxed);
            return (StatusCode::BAD_REQUEST, Json(e)).into_response();
        }
    };
    let Ok(_permit) = state.permits.acquire().await else {
        m.server_errors.fetch_add(1, Ordering::Relaxed);
        return (StatusCode::SERVICE_UNAVAILABLE, Json(FieldError::body("shutting down"))).into_response();
    };

    let corrector = state.corrector.clone();
    let mode = request.mode;
    let outcome =
        tokio::task::spawn_blocking(move || corrector.correct(&request.query, request.mode, request.retriever)).await;
    match outcome {
        Ok(Ok(result)) => {
            let handler = start.elapsed();
            m.retrieval.record(result.timings.retrieval);
            m.generation.record(result.timings.generation);
            m.handler.record(handler);
            m.overhead.record(handler.saturating_sub(result.timings.generation));
            Json(CorrectResponse::new(result, mode, handler)).into_response()
        }
        Ok(Err(err)) => {
            let status = error_status(&err);
            if status.is_client_error() {
                m.client_errors.fetch_add(1, Ordering::Relaxed);
            } else {
                m.server_errors.fetch_add(1, Ordering::Relaxed);
            }
            debug!(stage = ?err.stage(), error = %err, "correction failed");
            let body = serde_json::json!({ "error": err.to_string(), "stage": err.stage() });
            (status, Json(body)).into_response()
        }
        Err(join) => {
            m.server_errors.fetch_add(1, Ordering::Relaxed);
            (StatusCode::INTERNAL_SERVER_ERROR, Json(FieldError::body(join.to_string()))).into_response()
        }
    }
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    index_docs: usize,
    backend: String,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let corrector = &state.corrector;
    Json(Health {
        status: "ok",
        index_docs: corrector.retriever().index().map_or(0, |i| i.doc_count()),
        backend: corrector.backend().descriptor().name.clone(),
    })
}

async fn metrics(State(state): State<Arc<AppState>>) -> Json<MetricsSnapshot> {
    Json(state.metrics.snapshot())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/correct", post(correct))
        .route("/v1/health", get(health))
        .route("/v1/metrics", get(metrics))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
