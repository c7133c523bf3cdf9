use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retriever::ScriptedPlanner;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("chat client failure: {0}")]
    Transport(String),
    #[error("chat client failure: server returned status {0}")]
    Status(u16),
    #[error("chat client failure: malformed response: {0}")]
    Protocol(String),
    #[error("chat client failure: {0}")]
    Scripted(String),
}

/// Identifies a chat request for scripted replay and logging.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestKey {
    pub question_id: String,
    pub run: usize,
    pub attempt: usize,
    #[serde(default)]
    pub planner: bool,
}

impl RequestKey {
    pub fn answer(question_id: &str, run: usize, attempt: usize) -> Self {
        Self { question_id: question_id.to_string(), run, attempt, planner: false }
    }

    pub fn planner(question: &str) -> Self {
        Self { question_id: question.to_string(), run: 0, attempt: 0, planner: true }
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub prompt: &'a str,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub key: RequestKey,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ChatError>;
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Box<T> {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}

/// One scripted response. `run` and `attempt` left out match any value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Simulated client failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptEntry {
    fn specificity(&self, key: &RequestKey) -> Option<u8> {
        if self.question_id != key.question_id {
            return None;
        }
        let run = match self.run {
            Some(r) if r != key.run => return None,
            Some(_) => 1,
            None => 0,
        };
        let attempt = match self.attempt {
            Some(a) if a != key.attempt => return None,
            Some(_) => 2,
            None => 0,
        };
        Some(run + attempt)
    }
}

/// Replay file: answer responses keyed by question/run/attempt, planner
/// outputs keyed by question text, and a fallback response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFile {
    #[serde(default = "default_response")]
    pub default: String,
    #[serde(default)]
    pub responses: Vec<ScriptEntry>,
    #[serde(default)]
    pub planner: HashMap<String, String>,
}

fn default_response() -> String {
    r#"{"is_blank": true}"#.to_string()
}

impl Default for ReplayFile {
    fn default() -> Self {
        Self { default: default_response(), responses: Vec::new(), planner: HashMap::new() }
    }
}

impl ReplayFile {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn into_clients(self) -> (ScriptedChat, ScriptedPlanner) {
        let planner = self.planner.iter().fold(ScriptedPlanner::new(), |p, (q, raw)| p.with_script(q, raw));
        (ScriptedChat { entries: self.responses, default: self.default }, planner)
    }
}

/// Deterministic chat client. Among matching entries the most specific
/// wins (attempt outranks run); ties go to the earliest entry.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    entries: Vec<ScriptEntry>,
    default: String,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self { entries: Vec::new(), default: default_response() }
    }

    pub fn with_default(mut self, text: &str) -> Self {
        self.default = text.to_string();
        self
    }

    pub fn respond(mut self, question_id: &str, run: Option<usize>, attempt: Option<usize>, text: &str) -> Self {
        self.entries.push(ScriptEntry {
            question_id: question_id.into(),
            run,
            attempt,
            text: Some(text.into()),
            error: None,
        });
        self
    }

    pub fn fail(mut self, question_id: &str, run: Option<usize>, attempt: Option<usize>, message: &str) -> Self {
        self.entries.push(ScriptEntry {
            question_id: question_id.into(),
            run,
            attempt,
            text: None,
            error: Some(message.into()),
        });
        self
    }
}

impl ChatClient for ScriptedChat {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ChatError> {
        let mut best: Option<(u8, &ScriptEntry)> = None;
        for entry in &self.entries {
            if let Some(s) = entry.specificity(&request.key) {
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, entry));
                }
            }
        }
        match best {
            Some((_, ScriptEntry { error: Some(msg), .. })) => Err(ChatError::Scripted(msg.clone())),
            Some((_, ScriptEntry { text: Some(text), .. })) => Ok(text.clone()),
            _ => Ok(self.default.clone()),
        }
    }
}
