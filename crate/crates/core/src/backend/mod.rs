//! Text-generation backends.

mod mock;
mod remote;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::TERMINATOR;

pub use mock::{mock_budget, mock_correct, MockBackend};
pub use remote::{truncate_after_stop, RemoteBackend, RemoteConfig, RemoteStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    /// Always contains the training terminator `###`.
    pub stop_sequences: Vec<String>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), max_new_tokens: 32, temperature: 0.0, stop_sequences: vec![TERMINATOR.to_owned()] }
    }

    pub fn with_max_new_tokens(mut self, n: u32) -> Self {
        self.max_new_tokens = n.max(1);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t.max(0.0);
        self
    }

    /// Adds stop sequences; `###` is kept regardless.
    pub fn with_stop_sequences(mut self, stops: impl IntoIterator<Item = String>) -> Self {
        for s in stops {
            if !self.stop_sequences.contains(&s) {
                self.stop_sequences.push(s);
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    /// `"mock"` or `"remote:<model-id>"`.
    pub name: String,
    pub endpoint: Option<String>,
    #[serde(with = "crate::duration_ms")]
    pub timeout: Duration,
    pub max_retries: u32,
}

impl BackendDescriptor {
    pub fn mock() -> Self {
        Self { name: "mock".into(), endpoint: None, timeout: Duration::ZERO, max_retries: 0 }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend deadline of {0:?} exceeded")]
    DeadlineExceeded(Duration),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Raw completion text for `request`.
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

pub fn generate(backend: &dyn Backend, request: &GenerationRequest) -> Result<String, BackendError> {
    backend.generate(request)
}
