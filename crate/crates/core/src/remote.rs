//! JSON-over-HTTP encoder and chat clients.
//!
//! Encoder: `POST {"texts": [...], "task": "passage"|"query"}` →
//! `{"vectors": [[...], ...]}`. Chat: `POST {"prompt", "temperature",
//! "seed"?}` → `{"text": "..."}`. A bearer token is sent when configured.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use crate::answerer::{ChatClient, ChatError, ChatRequest};
use crate::embedder::{EmbedError, EmbedTask, EncoderClient, Vector};

const TIMEOUT: Duration = Duration::from_secs(120);

fn agent() -> Agent {
    Agent::config_builder().timeout_global(Some(TIMEOUT)).build().into()
}

fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
    agent: &Agent,
    endpoint: &str,
    token: Option<&str>,
    body: &B,
) -> Result<R, ureq::Error> {
    let mut req = agent.post(endpoint);
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    req.send_json(body)?.body_mut().read_json()
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
    task: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

pub struct HttpEncoder {
    agent: Agent,
    endpoint: String,
    token: Option<String>,
    dim: usize,
}

impl HttpEncoder {
    pub fn new(endpoint: &str, token: Option<String>, dim: usize) -> Self {
        Self { agent: agent(), endpoint: endpoint.to_string(), token, dim }
    }
}

impl EncoderClient for HttpEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("http:{}:dim={}", self.endpoint, self.dim)
    }

    fn embed(&self, texts: &[&str], task: EmbedTask) -> Result<Vec<Vector>, EmbedError> {
        let body = EmbedRequest { texts, task: task.as_str() };
        let resp: EmbedResponse = post(&self.agent, &self.endpoint, self.token.as_deref(), &body)
            .map_err(|e| EmbedError::Client(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::Client(format!(
                "asked for {} vectors, received {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimMismatch { expected: self.dim, got: v.len() });
                }
                Vector::new(v)
            })
            .collect()
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

pub struct HttpChat {
    agent: Agent,
    endpoint: String,
    token: Option<String>,
}

impl HttpChat {
    pub fn new(endpoint: &str, token: Option<String>) -> Self {
        Self { agent: agent(), endpoint: endpoint.to_string(), token }
    }
}

impl ChatClient for HttpChat {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ChatError> {
        let body = CompletionRequest { prompt: request.prompt, temperature: request.temperature, seed: request.seed };
        let resp: CompletionResponse =
            post(&self.agent, &self.endpoint, self.token.as_deref(), &body).map_err(|e| match e {
                ureq::Error::StatusCode(code) => ChatError::Status(code),
                ureq::Error::Json(e) => ChatError::Protocol(e.to_string()),
                other => ChatError::Transport(other.to_string()),
            })?;
        Ok(resp.text)
    }
}
