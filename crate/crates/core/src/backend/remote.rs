//! HTTP inference client.
//!
//! Wire contract: `POST <endpoint>` with
//! `{"prompt", "max_new_tokens", "temperature", "stop"}` answered by
//! `{"text"}`. Vendor APIs are adapted to this shape outside the core.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{Backend, BackendDescriptor, BackendError, GenerationRequest};

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_new_tokens: u32,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub model: String,
    pub endpoint: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub concurrency: usize,
    pub backoff_base: Duration,
    pub api_key: Option<String>,
}

impl RemoteConfig {
    pub fn new(model: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            concurrency: 8,
            backoff_base: Duration::from_millis(100),
            api_key: None,
        }
    }
}

/// Counters exposed for telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RemoteStats {
    pub requests: u64,
    pub attempts: u64,
    pub retries: u64,
    pub failures: u64,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limiter lock") += 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    endpoint: String,
    agent: ureq::Agent,
    api_key: Option<String>,
    backoff_base: Duration,
    limiter: Limiter,
    counters: Counters,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("descriptor", &self.descriptor).finish_non_exhaustive()
    }
}

enum Attempt {
    Done(String),
    Retry(BackendError),
    Fail(BackendError),
}

fn is_timeout(err: &(dyn std::error::Error + 'static)) -> bool {
    let mut current = Some(err);
    while let Some(e) = current {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        current = e.source();
    }
    false
}

/// Drops anything generated after the earliest stop sequence, keeping the
/// stop sequence itself.
pub fn truncate_after_stop(text: &str, stops: &[String]) -> String {
    stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|i| i + s.len()))
        .min()
        .map_or_else(|| text.to_owned(), |end| text[..end].to_owned())
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let descriptor = BackendDescriptor {
            name: format!("remote:{}", config.model),
            endpoint: Some(config.endpoint.clone()),
            timeout: config.timeout,
            max_retries: config.max_retries,
        };
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).max_idle_connections_per_host(config.concurrency).build();
        Self {
            descriptor,
            endpoint: config.endpoint,
            agent,
            api_key: config.api_key,
            backoff_base: config.backoff_base,
            limiter: Limiter::new(config.concurrency),
            counters: Counters::default(),
        }
    }

    pub fn stats(&self) -> RemoteStats {
        RemoteStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            attempts: self.counters.attempts.load(Ordering::Relaxed),
            retries: self.counters.retries.load(Ordering::Relaxed),
            failures: self.counters.failures.load(Ordering::Relaxed),
        }
    }

    fn attempt(&self, request: &GenerationRequest) -> Attempt {
        self.counters.attempts.fetch_add(1, Ordering::Relaxed);
        let body = WireRequest {
            prompt: &request.prompt,
            max_new_tokens: request.max_new_tokens,
            temperature: request.temperature,
            stop: &request.stop_sequences,
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call.send_json(&body) {
            Ok(response) => match response.into_json::<WireResponse>() {
                Ok(parsed) => Attempt::Done(parsed.text),
                Err(e) if is_timeout(&e) => Attempt::Fail(BackendError::DeadlineExceeded(self.descriptor.timeout)),
                Err(e) => Attempt::Fail(BackendError::Protocol(e.to_string())),
            },
            Err(ureq::Error::Status(status, response)) => {
                let body = response.into_string().unwrap_or_default();
                let err = BackendError::Http { status, body };
                if status >= 500 || status == 429 {
                    Attempt::Retry(err)
                } else {
                    Attempt::Fail(err)
                }
            }
            Err(ureq::Error::Transport(t)) => {
                if is_timeout(&t) {
                    Attempt::Fail(BackendError::DeadlineExceeded(self.descriptor.timeout))
                } else {
                    Attempt::Retry(BackendError::Transport { attempts: 0, message: t.to_string() })
                }
            }
        }
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let _permit = self.limiter.acquire();
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let max_attempts = self.descriptor.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let err = match self.attempt(request) {
                Attempt::Done(text) => return Ok(truncate_after_stop(&text, &request.stop_sequences)),
                Attempt::Fail(err) => err,
                Attempt::Retry(err) if attempt < max_attempts => {
                    let delay = self.backoff_base.saturating_mul(1 << (attempt - 1).min(10)).min(Duration::from_secs(10));
                    warn!(attempt, ?delay, error = %err, "retrying generation request");
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(delay);
                    continue;
                }
                Attempt::Retry(err) => match err {
                    BackendError::Transport { message, .. } => BackendError::Transport { attempts: attempt, message },
                    other => other,
                },
            };
            debug!(attempt, error = %err, "generation failed");
            self.counters.failures.fetch_add(1, Ordering::Relaxed);
            return Err(err);
        }
    }
}
