//! JSON-over-HTTP backend: `POST {endpoint}/v1/generate`.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendFault, BackendReply, QueryRequest, SuiteError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub role: String,
    pub task: String,
    pub prompt: String,
    pub image_b64: String,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl WireRequest {
    pub fn from_query(request: &QueryRequest) -> Self {
        Self {
            role: request.role.as_str().to_string(),
            task: request.task.as_str().to_string(),
            prompt: request.prompt.clone(),
            image_b64: base64::engine::general_purpose::STANDARD
                .encode(request.image.payload.bytes()),
            params: request.params.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireReply {
    pub text: String,
    pub model_id: String,
}

pub struct HttpBackend {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: impl AsRef<str>, timeout_ms: u64) -> Result<Self, SuiteError> {
        let endpoint = endpoint.as_ref().trim_end_matches('/');
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| SuiteError::InvalidEndpoint(format!("{endpoint} ({e})")))?;
        Ok(Self {
            url: format!("{endpoint}/v1/generate"),
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &QueryRequest) -> Result<BackendReply, BackendFault> {
        let body = WireRequest::from_query(request);
        let resp = self.client.post(&self.url).json(&body).send().map_err(|e| {
            if e.is_timeout() {
                BackendFault::Timeout
            } else {
                BackendFault::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendFault::Status(status.as_u16()));
        }
        let bytes = resp.bytes().map_err(|e| {
            if e.is_timeout() {
                BackendFault::Timeout
            } else {
                BackendFault::Transport(e.to_string())
            }
        })?;
        let reply: WireReply =
            serde_json::from_slice(&bytes).map_err(|e| BackendFault::Malformed(e.to_string()))?;
        Ok(BackendReply {
            text: reply.text,
            model_id: Some(reply.model_id).filter(|m| !m.is_empty()),
        })
    }
}
