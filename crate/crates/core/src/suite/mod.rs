//! The vision-language suite: a registry of backends keyed by role, plus the
//! retrying query path the loop uses to reach them.
//!
//! Backends are either HTTP services speaking the `/v1/generate` JSON
//! protocol or scripted fixtures (`mock:` endpoints). Timeouts and transport
//! errors never abort a query; once retries are exhausted the caller gets a
//! response flagged `failed` with empty text, which the loop counts as no
//! evidence.

mod http;
mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{RunConfig, DEFAULT_MAX_RETRIES, DEFAULT_TIMEOUT_MS};
use crate::types::{ImageRef, ModelResponse, ModelRole, TaskKind};

pub use http::{HttpBackend, WireReply, WireRequest};
pub use mock::{FixtureRule, MockBackend, MockFixture, Pattern, RoleMatcher};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("role not registered: {0}")]
    UnregisteredRole(ModelRole),
    #[error("missing mandatory roles for {task}: {}", .roles.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(", "))]
    MissingRoles { task: TaskKind, roles: Vec<ModelRole> },
    #[error("invalid endpoint '{0}': scheme must be http, https or mock")]
    InvalidEndpoint(String),
    #[error("backend for {0} has an empty model_id")]
    EmptyModelId(ModelRole),
    #[error("{path}:{line}: {message}")]
    Fixture {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no rule matched {role} query for image '{image_id}' (prompt: {prompt:?})")]
    NoRuleMatched {
        role: ModelRole,
        image_id: String,
        prompt: String,
    },
    #[error("backend for {role} failed: {message}")]
    Backend { role: ModelRole, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid suite config {path}: {message}")]
    Config { path: PathBuf, message: String },
}

/// Where a backend lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Http(String),
    Mock(PathBuf),
}

impl Endpoint {
    pub fn parse(raw: &str) -> Result<Self, SuiteError> {
        if let Some(path) = raw.strip_prefix("mock:") {
            if path.is_empty() {
                return Err(SuiteError::InvalidEndpoint(raw.to_string()));
            }
            return Ok(Endpoint::Mock(PathBuf::from(path)));
        }
        match reqwest::Url::parse(raw) {
            Ok(url) if matches!(url.scheme(), "http" | "https") && url.has_host() => {
                Ok(Endpoint::Http(raw.trim_end_matches('/').to_string()))
            }
            _ => Err(SuiteError::InvalidEndpoint(raw.to_string())),
        }
    }
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub role: ModelRole,
    pub endpoint: String,
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl BackendDescriptor {
    pub fn new(role: ModelRole, endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            role,
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn with_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    fn check(&self) -> Result<Endpoint, SuiteError> {
        if self.model_id.trim().is_empty() {
            return Err(SuiteError::EmptyModelId(self.role));
        }
        Endpoint::parse(&self.endpoint)
    }
}

/// One request as seen by a backend.
#[derive(Debug, Clone)]
pub struct QueryRequest {
    pub role: ModelRole,
    pub task: TaskKind,
    pub prompt: String,
    pub image: ImageRef,
    /// Passed through to the backend untouched.
    pub params: BTreeMap<String, serde_json::Value>,
}

impl QueryRequest {
    pub fn new(role: ModelRole, task: TaskKind, prompt: impl Into<String>, image: ImageRef) -> Self {
        Self {
            role,
            task,
            prompt: prompt.into(),
            image,
            params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    /// Overrides the descriptor's model id when the backend reports one.
    pub model_id: Option<String>,
}

impl BackendReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            model_id: None,
        }
    }
}

/// Why a single attempt failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFault {
    Timeout,
    Transport(String),
    Status(u16),
    Malformed(String),
    /// Not retried; surfaces as a hard error.
    NoRuleMatched,
    Fatal(String),
}

impl BackendFault {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendFault::Timeout
                | BackendFault::Transport(_)
                | BackendFault::Status(_)
                | BackendFault::Malformed(_)
        )
    }
}

impl fmt::Display for BackendFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendFault::Timeout => f.write_str("timed out"),
            BackendFault::Transport(m) => write!(f, "transport error: {m}"),
            BackendFault::Status(s) => write!(f, "HTTP status {s}"),
            BackendFault::Malformed(m) => write!(f, "malformed reply: {m}"),
            BackendFault::NoRuleMatched => f.write_str("no rule matched"),
            BackendFault::Fatal(m) => f.write_str(m),
        }
    }
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &QueryRequest) -> Result<BackendReply, BackendFault>;

    /// Whether wall-clock latency should be recorded. Scripted backends
    /// return `false` so their traces stay reproducible.
    fn measures_latency(&self) -> bool {
        true
    }
}

struct Registered {
    descriptor: BackendDescriptor,
    backend: Arc<dyn Backend>,
}

/// Role → backend map. Immutable once handed to the loop; shareable across
/// worker threads.
pub struct SuiteRegistry {
    backends: BTreeMap<ModelRole, Registered>,
    base_dir: Option<PathBuf>,
    max_in_flight: usize,
}

impl Default for SuiteRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for SuiteRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SuiteRegistry")
            .field("descriptors", &self.descriptors().collect::<Vec<_>>())
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl SuiteRegistry {
    pub fn new() -> Self {
        Self {
            backends: BTreeMap::new(),
            base_dir: None,
            max_in_flight: crate::config::DEFAULT_MAX_IN_FLIGHT,
        }
    }

    /// Relative `mock:` fixture paths resolve against `dir`.
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    /// Registers a backend built from the descriptor's endpoint. A second
    /// registration for the same role replaces the first.
    pub fn register(&mut self, descriptor: BackendDescriptor) -> Result<(), SuiteError> {
        let backend: Arc<dyn Backend> = match descriptor.check()? {
            Endpoint::Http(url) => Arc::new(HttpBackend::new(url, descriptor.timeout_ms)?),
            Endpoint::Mock(path) => {
                let path = match &self.base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path,
                };
                Arc::new(MockBackend::new(MockFixture::load(&path)?))
            }
        };
        self.backends
            .insert(descriptor.role, Registered { descriptor, backend });
        Ok(())
    }

    /// Registers a caller-supplied backend implementation under `descriptor`.
    pub fn register_backend(
        &mut self,
        descriptor: BackendDescriptor,
        backend: Arc<dyn Backend>,
    ) -> Result<(), SuiteError> {
        descriptor.check()?;
        self.backends
            .insert(descriptor.role, Registered { descriptor, backend });
        Ok(())
    }

    pub fn contains(&self, role: ModelRole) -> bool {
        self.backends.contains_key(&role)
    }

    pub fn descriptor(&self, role: ModelRole) -> Option<&BackendDescriptor> {
        self.backends.get(&role).map(|r| &r.descriptor)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &BackendDescriptor> {
        self.backends.values().map(|r| &r.descriptor)
    }

    pub fn len(&self) -> usize {
        self.backends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backends.is_empty()
    }

    /// True when no registered backend reports wall-clock latency.
    pub fn is_fully_scripted(&self) -> bool {
        self.backends.values().all(|r| !r.backend.measures_latency())
    }

    /// Fails naming every mandatory role for `task` that is not registered.
    pub fn require(&self, task: TaskKind) -> Result<(), SuiteError> {
        let missing: Vec<ModelRole> = ModelRole::mandatory_for(task)
            .iter()
            .copied()
            .filter(|r| !self.contains(*r))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(SuiteError::MissingRoles {
                task,
                roles: missing,
            })
        }
    }

    /// Registered subset of the discovery panel for `task`, in query order.
    pub fn discovery_roles(&self, task: TaskKind) -> Vec<ModelRole> {
        ModelRole::discovery_for(task)
            .iter()
            .copied()
            .filter(|r| self.contains(*r))
            .collect()
    }

    /// Sends one request, retrying retryable faults up to the descriptor's
    /// `max_retries`. Exhausted retries yield a `failed` response, not an
    /// error.
    pub fn query_model(
        &self,
        request: &QueryRequest,
        iteration: u32,
    ) -> Result<ModelResponse, SuiteError> {
        let registered = self
            .backends
            .get(&request.role)
            .ok_or(SuiteError::UnregisteredRole(request.role))?;
        let descriptor = &registered.descriptor;
        let timed = registered.backend.measures_latency();
        let started = Instant::now();
        let attempts = 1 + descriptor.max_retries;
        let mut last_fault = BackendFault::Timeout;

        for _ in 0..attempts {
            match registered.backend.generate(request) {
                Ok(reply) => {
                    return Ok(ModelResponse {
                        role: request.role,
                        model_id: reply.model_id.unwrap_or_else(|| descriptor.model_id.clone()),
                        prompt: request.prompt.clone(),
                        text: reply.text,
                        iteration,
                        latency_ms: if timed { elapsed_ms(started) } else { 0 },
                        failed: false,
                        failure: None,
                    })
                }
                Err(BackendFault::NoRuleMatched) => {
                    return Err(SuiteError::NoRuleMatched {
                        role: request.role,
                        image_id: request.image.id.clone(),
                        prompt: request.prompt.clone(),
                    })
                }
                Err(fault) if !fault.is_retryable() => {
                    return Err(SuiteError::Backend {
                        role: request.role,
                        message: fault.to_string(),
                    })
                }
                Err(fault) => last_fault = fault,
            }
        }

        Ok(ModelResponse {
            role: request.role,
            model_id: descriptor.model_id.clone(),
            prompt: request.prompt.clone(),
            text: String::new(),
            iteration,
            latency_ms: if timed { elapsed_ms(started) } else { 0 },
            failed: true,
            failure: Some(format!("{last_fault} after {attempts} attempt(s)")),
        })
    }

    /// Fans `template` out to every role in `roles`. Results come back in
    /// input order; at most `max_in_flight` requests run at once.
    pub fn query_many(
        &self,
        roles: &[ModelRole],
        template: &QueryRequest,
        iteration: u32,
    ) -> Result<Vec<ModelResponse>, SuiteError> {
        let requests: Vec<QueryRequest> = roles
            .iter()
            .map(|role| QueryRequest {
                role: *role,
                ..template.clone()
            })
            .collect();
        self.query_all(&requests, iteration)
    }

    /// Issues independent requests concurrently, returning responses in
    /// request order. Unregistered roles fail before anything is sent.
    pub fn query_all(
        &self,
        requests: &[QueryRequest],
        iteration: u32,
    ) -> Result<Vec<ModelResponse>, SuiteError> {
        if let Some(missing) = requests.iter().find(|r| !self.contains(r.role)) {
            return Err(SuiteError::UnregisteredRole(missing.role));
        }
        if requests.len() <= 1 {
            return requests
                .iter()
                .map(|r| self.query_model(r, iteration))
                .collect();
        }

        let mut out = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(self.max_in_flight) {
            let results: Vec<Result<ModelResponse, SuiteError>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|req| s.spawn(move || self.query_model(req, iteration)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("query thread panicked"))
                    .collect()
            });
            for r in results {
                out.push(r?);
            }
        }
        Ok(out)
    }
}

fn elapsed_ms(started: Instant) -> u64 {
    started.elapsed().as_millis().min(u64::MAX as u128) as u64
}

/// On-disk suite configuration: backends plus loop settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub backends: Vec<BackendDescriptor>,
    #[serde(default)]
    pub run: RunConfig,
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self, SuiteError> {
        let raw = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|e| SuiteError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Builds a registry; relative mock paths resolve against `base_dir`.
    pub fn build_registry(&self, base_dir: &Path) -> Result<SuiteRegistry, SuiteError> {
        let mut registry = SuiteRegistry::new()
            .with_base_dir(base_dir)
            .with_max_in_flight(self.run.max_in_flight);
        for d in &self.backends {
            registry.register(d.clone())?;
        }
        Ok(registry)
    }
}
