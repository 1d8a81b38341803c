//! Layered configuration: built-in defaults, then a TOML file, then
//! `SPELLER_<SECTION>_<KEY>` environment variables.
//!
//! ```toml
//! [catalog]
//! path = "catalog.tsv"
//! format = "tsv"
//!
//! [index]
//! path = "catalog.spix"
//! k1 = 1.2
//! b = 0.75
//!
//! [retrieval]
//! retriever = "fuzzy_bm25"
//! context_size = 4
//!
//! [backend]
//! kind = "remote"
//! model = "mistral-7b-instruct"
//! endpoint = "http://127.0.0.1:9000/generate"
//!
//! [service]
//! bind = "127.0.0.1:8080"
//! ```
//!
//! `SPELLER_LLM_ENDPOINT` also overrides `backend.endpoint`. The API key is
//! read from `SPELLER_LLM_API_KEY` only and is rejected in files.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::backend::{Backend, MockBackend, RemoteBackend, RemoteConfig};
use crate::catalog::{load_catalog, CatalogError, CatalogFormat};
use crate::gateway::{DenseClient, Retriever, RetrieverKind};
use crate::pipeline::{CorrectionMode, PipelineConfig, MAX_CONTEXT_SIZE, MIN_CONTEXT_SIZE};
use crate::sparse::{build_index, load_index, Bm25Params, IndexError, InvertedIndex};

pub const ENV_PREFIX: &str = "SPELLER_";
pub const ENV_LLM_ENDPOINT: &str = "SPELLER_LLM_ENDPOINT";
pub const ENV_LLM_API_KEY: &str = "SPELLER_LLM_API_KEY";

const SECTIONS: [&str; 5] = ["catalog", "index", "retrieval", "backend", "service"];

/// Accepts any TOML scalar for a string field, so env overrides such as
/// `SPELLER_BACKEND_MODEL=7` still read as strings.
fn lenient_string<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    Ok(match Option::<toml::Value>::deserialize(d)? {
        None => None,
        Some(toml::Value::String(s)) => Some(s),
        Some(v @ (toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_))) => Some(v.to_string()),
        Some(other) => return Err(serde::de::Error::custom(format!("expected a string, found {}", other.type_str()))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSection {
    #[serde(deserialize_with = "lenient_string")]
    pub path: Option<String>,
    pub format: CatalogFormat,
}

impl Default for CatalogSection {
    fn default() -> Self {
        Self { path: None, format: CatalogFormat::Tsv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    #[serde(deserialize_with = "lenient_string")]
    pub path: Option<String>,
    pub k1: f64,
    pub b: f64,
}

impl Default for IndexSection {
    fn default() -> Self {
        let p = Bm25Params::default();
        Self { path: None, k1: p.k1, b: p.b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub mode: CorrectionMode,
    pub retriever: RetrieverKind,
    pub context_size: usize,
    #[serde(deserialize_with = "lenient_string")]
    pub dense_endpoint: Option<String>,
    pub dense_timeout_ms: u64,
    pub dense_fallback: bool,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            mode: CorrectionMode::Rag,
            retriever: RetrieverKind::FuzzyBm25,
            context_size: 4,
            dense_endpoint: None,
            dense_timeout_ms: 2000,
            dense_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "remote" => Ok(Self::Remote),
            other => Err(format!("unknown backend `{other}` (expected mock or remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    #[serde(deserialize_with = "lenient_string")]
    pub model: Option<String>,
    #[serde(deserialize_with = "lenient_string")]
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub concurrency: usize,
    pub max_new_tokens: u32,
    pub temperature: f64,
    /// Never read from files.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            model: None,
            endpoint: None,
            timeout_ms: 30_000,
            max_retries: 2,
            concurrency: 8,
            max_new_tokens: 32,
            temperature: 0.0,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    /// Upper bound on in-flight correction requests.
    pub max_in_flight: usize,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), max_in_flight: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub catalog: CatalogSection,
    pub index: IndexSection,
    pub retrieval: RetrievalSection,
    pub backend: BackendSection,
    pub service: ServiceSection,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{0} must not appear in a config file; set {ENV_LLM_API_KEY} instead")]
    SecretInFile(String),
    #[error("environment variable {var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

fn env_value(raw: &str) -> toml::Value {
    // Scalars parse as TOML; anything else is taken as a bare string.
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

impl Config {
    /// Parses a TOML document without env overrides.
    pub fn from_toml(content: &str) -> Result<Self, ConfigError> {
        Self::layer(content, std::iter::empty::<(String, String)>())
    }

    /// Defaults, then `file` if given, then the process environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        let content = match file {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?,
            None => String::new(),
        };
        Self::layer(&content, std::env::vars())
    }

    /// Applies `env` (name, value) pairs over the TOML document `content`.
    pub fn layer<K, V>(content: &str, env: impl IntoIterator<Item = (K, V)>) -> Result<Self, ConfigError>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = toml::from_str(content).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(toml::Value::Table(backend)) = table.get("backend") {
            if backend.contains_key("api_key") {
                return Err(ConfigError::SecretInFile("backend.api_key".into()));
            }
        }

        let mut endpoint_alias = None;
        let mut api_key = None;
        let mut overrides: Vec<(String, String, String)> = Vec::new();
        for (name, value) in env {
            let (name, value) = (name.as_ref(), value.as_ref());
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            match name {
                ENV_LLM_ENDPOINT => endpoint_alias = Some(value.to_owned()),
                ENV_LLM_API_KEY => api_key = Some(value.to_owned()).filter(|k| !k.is_empty()),
                _ => {
                    let rest = rest.to_ascii_lowercase();
                    match SECTIONS.iter().find(|s| rest.starts_with(&format!("{s}_"))) {
                        Some(section) => {
                            let key = rest[section.len() + 1..].to_owned();
                            if section == &"backend" && key == "api_key" {
                                return Err(ConfigError::Env {
                                    var: name.to_owned(),
                                    message: format!("use {ENV_LLM_API_KEY} for the API key"),
                                });
                            }
                            overrides.push((section.to_string(), key, value.to_owned()));
                        }
                        None => warn!(var = name, "ignoring unrecognized environment variable"),
                    }
                }
            }
        }
        // The sectioned form wins over the alias.
        if let Some(endpoint) = endpoint_alias {
            overrides.insert(0, ("backend".into(), "endpoint".into(), endpoint));
        }

        for (section, key, raw) in &overrides {
            let entry = table.entry(section.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(t) = entry else {
                return Err(ConfigError::Parse(format!("`{section}` must be a table")));
            };
            t.insert(key.clone(), env_value(raw));
        }

        let mut config: Config = table.try_into().map_err(|e: toml::de::Error| {
            let env_keys: Vec<String> =
                overrides.iter().map(|(s, k, _)| format!("{ENV_PREFIX}{}_{}", s, k).to_ascii_uppercase()).collect();
            if env_keys.is_empty() {
                ConfigError::Parse(e.to_string())
            } else {
                ConfigError::Parse(format!("{e} (environment overrides in effect: {})", env_keys.join(", ")))
            }
        })?;
        config.backend.api_key = api_key;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bm25_params().validate()?;
        let r = &self.retrieval;
        if !(MIN_CONTEXT_SIZE..=MAX_CONTEXT_SIZE).contains(&r.context_size) {
            return Err(ConfigError::Invalid(format!(
                "retrieval.context_size must be within {MIN_CONTEXT_SIZE}..={MAX_CONTEXT_SIZE}"
            )));
        }
        if r.retriever == RetrieverKind::DenseRemote && r.dense_endpoint.is_none() {
            return Err(ConfigError::Invalid("retrieval.dense_endpoint is required for dense_remote".into()));
        }
        let b = &self.backend;
        if b.kind == BackendKind::Remote {
            if b.endpoint.as_deref().unwrap_or("").is_empty() {
                return Err(ConfigError::Invalid(format!("backend.endpoint (or {ENV_LLM_ENDPOINT}) is required")));
            }
            if b.model.as_deref().unwrap_or("").is_empty() {
                return Err(ConfigError::Invalid("backend.model is required for the remote backend".into()));
            }
        }
        if b.concurrency == 0 || b.max_new_tokens == 0 {
            return Err(ConfigError::Invalid("backend.concurrency and backend.max_new_tokens must be positive".into()));
        }
        if !(b.temperature.is_finite() && b.temperature >= 0.0) {
            return Err(ConfigError::Invalid("backend.temperature must be non-negative".into()));
        }
        if self.service.max_in_flight == 0 {
            return Err(ConfigError::Invalid("service.max_in_flight must be positive".into()));
        }
        Ok(())
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params { k1: self.index.k1, b: self.index.b }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            context_size: self.retrieval.context_size,
            max_new_tokens: self.backend.max_new_tokens,
            temperature: self.backend.temperature,
            concurrency: self.backend.concurrency,
        }
    }

    /// Loads the saved index if `index.path` exists, else builds one from
    /// the catalog. `None` when neither is configured.
    pub fn load_index(&self) -> Result<Option<InvertedIndex>, ConfigError> {
        if let Some(path) = self.index.path.as_deref().map(PathBuf::from) {
            if path.exists() {
                info!(path = %path.display(), "loading index");
                return Ok(Some(load_index(&path)?));
            }
        }
        match &self.catalog.path {
            Some(path) => {
                info!(%path, "building index from catalog");
                let loaded = load_catalog(path, self.catalog.format)?;
                Ok(Some(build_index(&loaded.documents)?))
            }
            None => Ok(None),
        }
    }

    pub fn build_retriever(&self, index: Option<Arc<InvertedIndex>>) -> Retriever {
        let mut retriever = Retriever::new(self.bm25_params()).with_dense_fallback(self.retrieval.dense_fallback);
        if let Some(index) = index {
            retriever = retriever.with_index(index);
        }
        if let Some(endpoint) = &self.retrieval.dense_endpoint {
            retriever =
                retriever.with_dense(DenseClient::new(endpoint, Duration::from_millis(self.retrieval.dense_timeout_ms)));
        }
        retriever
    }

    pub fn build_backend(&self) -> Arc<dyn Backend> {
        let b = &self.backend;
        match b.kind {
            BackendKind::Mock => Arc::new(MockBackend::new()),
            BackendKind::Remote => {
                let mut rc = RemoteConfig::new(b.model.clone().unwrap_or_default(), b.endpoint.clone().unwrap_or_default());
                rc.timeout = Duration::from_millis(b.timeout_ms);
                rc.max_retries = b.max_retries;
                rc.concurrency = b.concurrency;
                rc.api_key = b.api_key.clone();
                Arc::new(RemoteBackend::new(rc))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"
[index]
k1 = 1.5

[backend]
kind = "remote"
model = "m"
endpoint = "http://file/generate"
"#;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.bm25_params(), Bm25Params::default());
        assert_eq!(c.backend.kind, BackendKind::Mock);
        assert_eq!(c.retrieval.context_size, 4);
    }

    #[test]
    fn precedence_env_over_file_over_default() {
        let c = Config::layer(FILE, env(&[("SPELLER_INDEX_K1", "2.0")])).unwrap();
        assert_eq!(c.index.k1, 2.0);
        assert_eq!(c.index.b, 0.75);

        let c = Config::from_toml(FILE).unwrap();
        assert_eq!(c.index.k1, 1.5);
        assert_eq!(c.backend.endpoint.as_deref(), Some("http://file/generate"));
    }

    #[test]
    fn llm_endpoint_alias_and_api_key() {
        let c = Config::layer(
            FILE,
            env(&[("SPELLER_LLM_ENDPOINT", "http://env/generate"), ("SPELLER_LLM_API_KEY", "secret"), ("HOME", "/x")]),
        )
        .unwrap();
        assert_eq!(c.backend.endpoint.as_deref(), Some("http://env/generate"));
        assert_eq!(c.backend.api_key.as_deref(), Some("secret"));
        assert!(!toml::to_string(&c).unwrap().contains("secret"));

        let c = Config::layer(
            FILE,
            env(&[("SPELLER_BACKEND_ENDPOINT", "http://sectioned"), ("SPELLER_LLM_ENDPOINT", "http://alias")]),
        )
        .unwrap();
        assert_eq!(c.backend.endpoint.as_deref(), Some("http://sectioned"));
    }

    #[test]
    fn secrets_are_rejected_in_files() {
        let err = Config::from_toml("[backend]\napi_key = \"k\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::SecretInFile(_)), "{err}");
        let err = Config::layer("", env(&[("SPELLER_BACKEND_API_KEY", "k")])).unwrap_err();
        assert!(matches!(err, ConfigError::Env { .. }), "{err}");
    }

    #[test]
    fn typed_env_values() {
        let c = Config::layer(
            "",
            env(&[
                ("SPELLER_RETRIEVAL_CONTEXT_SIZE", "6"),
                ("SPELLER_RETRIEVAL_RETRIEVER", "bm25"),
                ("SPELLER_RETRIEVAL_DENSE_FALLBACK", "false"),
                ("SPELLER_BACKEND_MODEL", "7"),
                ("SPELLER_SERVICE_BIND", "0.0.0.0:9000"),
            ]),
        )
        .unwrap();
        assert_eq!(c.retrieval.context_size, 6);
        assert_eq!(c.retrieval.retriever, RetrieverKind::Bm25);
        assert!(!c.retrieval.dense_fallback);
        assert_eq!(c.backend.model.as_deref(), Some("7"));
        assert_eq!(c.service.bind, "0.0.0.0:9000");
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert!(Config::from_toml("[index]\nk3 = 1\n").is_err());
        assert!(Config::from_toml("[nonsense]\n").is_err());
        assert!(Config::layer("", env(&[("SPELLER_INDEX_KK", "1")])).is_err());
        assert!(Config::from_toml("[retrieval]\ncontext_size = 9\n").is_err());
        assert!(Config::from_toml("[index]\nb = 2.0\n").is_err());
        assert!(Config::from_toml("[backend]\nkind = \"remote\"\n").is_err());
        assert!(Config::from_toml("[retrieval]\nretriever = \"dense_remote\"\n").is_err());
    }

    #[test]
    fn builds_components() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = dir.path().join("c.tsv");
        std::fs::write(&catalog, "1\tcuisinart air fryer\n2\tair fryer\n").unwrap();
        let content = format!("[catalog]\npath = {:?}\n", catalog.display().to_string());
        let c = Config::from_toml(&content).unwrap();
        let index = c.load_index().unwrap().unwrap();
        assert_eq!(index.doc_count(), 2);
        let r = c.build_retriever(Some(Arc::new(index)));
        assert!(r.index().is_some());
        assert_eq!(c.build_backend().descriptor().name, "mock");
        assert!(Config::default().load_index().unwrap().is_none());

        let c = Config::from_toml(FILE).unwrap();
        assert_eq!(c.build_backend().descriptor().name, "remote:m");
    }
}
