//! Query planning: expanding one question into several search queries.

use std::collections::HashMap;

use crate::answerer::{ChatClient, ChatRequest, RequestKey};

pub trait PlannerClient: Send + Sync {
    /// Returns at least one query; on malformed model output, exactly
    /// `[question]`.
    fn plan(&self, question: &str, n: usize) -> Vec<String>;
}

/// Planner prompt asking for `n` queries as a JSON array of strings.
pub fn planner_prompt(question: &str, n: usize) -> String {
    format!(
        "Given the question: {question}\n\
         Generate {n} search queries that:\n\
         1. Reword it with different vocabulary\n\
         2. Spell out any abbreviations\n\
         3. Include keywords a technical report would likely use\n\
         4. Split compound questions into simpler parts\n\
         Output as JSON array of strings."
    )
}

/// Extracts the first JSON array in `raw` (prose and code fences around it
/// are tolerated) and returns its non-empty string entries. `None` when no
/// array parses or nothing usable is inside.
pub fn parse_planner_output(raw: &str) -> Option<Vec<String>> {
    for (i, _) in raw.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<serde_json::Value>();
        let Some(Ok(serde_json::Value::Array(items))) = stream.next() else { continue };
        let queries: Vec<String> = items
            .iter()
            .filter_map(|v| v.as_str())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        return (!queries.is_empty()).then_some(queries);
    }
    None
}

/// Applies the planner contract: 1..=n non-empty queries, falling back to
/// the question itself.
pub fn plan_queries(question: &str, n: usize, planner: &dyn PlannerClient) -> Vec<String> {
    let mut queries: Vec<String> = planner
        .plan(question, n.max(1))
        .into_iter()
        .map(|q| q.trim().to_string())
        .filter(|q| !q.is_empty())
        .collect();
    queries.truncate(n.max(1));
    if queries.is_empty() {
        queries.push(question.to_string());
    }
    queries
}

/// Planner that answers every question with the question itself.
#[derive(Debug, Default, Clone)]
pub struct IdentityPlanner;

impl PlannerClient for IdentityPlanner {
    fn plan(&self, question: &str, _n: usize) -> Vec<String> {
        vec![question.to_string()]
    }
}

/// Replays raw model outputs keyed by question text; unknown questions fall
/// back to the question itself.
#[derive(Debug, Default, Clone)]
pub struct ScriptedPlanner {
    scripts: HashMap<String, String>,
}

impl ScriptedPlanner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_script(mut self, question: &str, raw_output: &str) -> Self {
        self.scripts.insert(question.to_string(), raw_output.to_string());
        self
    }
}

impl PlannerClient for ScriptedPlanner {
    fn plan(&self, question: &str, _n: usize) -> Vec<String> {
        self.scripts
            .get(question)
            .and_then(|raw| parse_planner_output(raw))
            .unwrap_or_else(|| vec![question.to_string()])
    }
}

/// Planner backed by a chat model.
pub struct LlmPlanner<C> {
    chat: C,
    temperature: f64,
}

impl<C: ChatClient> LlmPlanner<C> {
    pub fn new(chat: C, temperature: f64) -> Self {
        Self { chat, temperature }
    }
}

impl<C: ChatClient> PlannerClient for LlmPlanner<C> {
    fn plan(&self, question: &str, n: usize) -> Vec<String> {
        let prompt = planner_prompt(question, n);
        let request = ChatRequest {
            prompt: &prompt,
            temperature: self.temperature,
            seed: None,
            key: RequestKey::planner(question),
        };
        match self.chat.complete(&request) {
            Ok(raw) => parse_planner_output(&raw),
            Err(e) => {
                tracing::warn!("query planner failed, using the question only: {e}");
                None
            }
        }
        .unwrap_or_else(|| vec![question.to_string()])
    }
}
