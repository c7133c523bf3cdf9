//! Prompt construction, structured-output parsing and the retry-on-abstention
//! loop.

mod chat;
mod prompt;
mod record;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retriever::{retrieve_planned, ContextSnippet, RetrievalError, RetrievalHandles, RetrieverConfig};

pub use chat::{ChatClient, ChatError, ChatRequest, ReplayFile, RequestKey, ScriptEntry, ScriptedChat};
pub use prompt::{build_prompt, render_snippet, PromptBundle, PromptOrder, DEFAULT_TOKEN_BUDGET};
pub(crate) use record::record_from_object;
pub use record::{parse_answer, AnswerRecord, AnswerValue, ParseFailure};

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("token budget {budget} cannot hold the top-ranked snippet group ({needed} tokens)")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error(transparent)]
    Client(#[from] ChatError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnswerConfig {
    pub order: PromptOrder,
    pub token_budget: usize,
    pub temperature: f64,
    pub max_retries: usize,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        Self { order: PromptOrder::ContextFirst, token_budget: DEFAULT_TOKEN_BUDGET, temperature: 0.7, max_retries: 0 }
    }
}

/// Outcome of one generation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: usize,
    pub k: usize,
    pub k_final: Option<usize>,
    pub snippets: usize,
    pub retained: usize,
    pub is_blank: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOutcome {
    pub record: AnswerRecord,
    pub attempts: Vec<AttemptLog>,
}

/// One prompt → completion → parse round.
///
/// Unparseable output becomes a blank record carrying `parse_error`, and
/// cited documents that were not in the prompt are removed.
pub fn answer_once(
    question: &str,
    snippets: &[ContextSnippet],
    chat: &dyn ChatClient,
    cfg: &AnswerConfig,
    key: RequestKey,
    seed: Option<u64>,
) -> Result<(AnswerRecord, PromptBundle, Vec<String>), AnswerError> {
    let bundle = build_prompt(snippets, question, cfg.order, cfg.token_budget)?;
    let prompt = bundle.render();
    let raw = chat.complete(&ChatRequest { prompt: &prompt, temperature: cfg.temperature, seed, key })?;
    let mut record = match parse_answer(&raw) {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!("unparseable model output treated as abstention: {e}");
            AnswerRecord::parse_failure(e.0)
        }
    };
    let dropped: Vec<String> = record.ref_id.iter().filter(|r| !bundle.doc_ids.contains(*r)).cloned().collect();
    if !dropped.is_empty() {
        tracing::info!("dropping references not present in the prompt: {}", dropped.join(", "));
        record.ref_id.retain(|r| bundle.doc_ids.contains(r));
    }
    Ok((record, bundle, dropped))
}

/// `k` at a given attempt: doubled per retry.
pub fn retry_schedule(k: usize, attempt: usize) -> usize {
    let factor = 1usize.checked_shl(attempt.min(usize::BITS as usize - 1) as u32).unwrap_or(usize::MAX);
    k.saturating_mul(factor)
}

/// A planned question and its retrieval results, memoized by attempt so
/// ensemble runs share retrieval work.
pub struct RetrievalSession<'a> {
    question: String,
    queries: Vec<String>,
    cfg: RetrieverConfig,
    handles: RetrievalHandles<'a>,
    cache: Mutex<HashMap<usize, Arc<Vec<ContextSnippet>>>>,
}

impl<'a> RetrievalSession<'a> {
    pub fn new(question: &str, queries: Vec<String>, cfg: RetrieverConfig, handles: RetrievalHandles<'a>) -> Self {
        Self { question: question.to_string(), queries, cfg, handles, cache: Mutex::new(HashMap::new()) }
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn queries(&self) -> &[String] {
        &self.queries
    }

    /// Retriever settings for an attempt: `topk` and `topk_final` both
    /// follow the retry schedule.
    pub fn config_for(&self, attempt: usize) -> RetrieverConfig {
        RetrieverConfig {
            topk: retry_schedule(self.cfg.topk, attempt),
            topk_final: self.cfg.topk_final.map(|f| retry_schedule(f, attempt)),
            ..self.cfg.clone()
        }
    }

    pub fn snippets(&self, attempt: usize) -> Result<Arc<Vec<ContextSnippet>>, RetrievalError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&attempt) {
            return Ok(hit.clone());
        }
        let snippets = Arc::new(retrieve_planned(&self.question, &self.queries, &self.config_for(attempt), self.handles)?);
        self.cache.lock().expect("cache lock").insert(attempt, snippets.clone());
        Ok(snippets)
    }
}

/// Answers, and on abstention re-retrieves with a larger `k` and asks again,
/// up to `max_retries` times. Client failures are retried the same way and
/// returned once no retries remain.
pub fn answer_with_retry(
    question_id: &str,
    session: &RetrievalSession<'_>,
    chat: &dyn ChatClient,
    cfg: &AnswerConfig,
    run: usize,
    seed: Option<u64>,
) -> Result<AnswerOutcome, AnswerError> {
    let mut attempts = Vec::new();
    for attempt in 0..=cfg.max_retries {
        let rcfg = session.config_for(attempt);
        let snippets = session.snippets(attempt)?;
        let key = RequestKey::answer(question_id, run, attempt);
        let attempt_seed = seed.map(|s| s.wrapping_add(attempt as u64));
        let last = attempt == cfg.max_retries;
        let mut log = AttemptLog {
            attempt,
            k: rcfg.topk,
            k_final: rcfg.topk_final,
            snippets: snippets.len(),
            retained: 0,
            is_blank: true,
            parse_error: None,
            dropped_refs: Vec::new(),
            client_error: None,
        };
        match answer_once(session.question(), &snippets, chat, cfg, key, attempt_seed) {
            Ok((record, bundle, dropped)) => {
                log.retained = bundle.retained_snippets;
                log.is_blank = record.is_blank;
                log.parse_error = record.parse_error.clone();
                log.dropped_refs = dropped;
                tracing::debug!(question_id, run, attempt, k = log.k, blank = record.is_blank, "answer attempt");
                attempts.push(log);
                if !record.is_blank || last {
                    return Ok(AnswerOutcome { record, attempts });
                }
            }
            Err(AnswerError::Client(e)) if !last => {
                tracing::warn!(question_id, run, attempt, "chat client failed, retrying: {e}");
                log.client_error = Some(e.to_string());
                attempts.push(log);
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("the final attempt always returns")
}
