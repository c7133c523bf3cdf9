use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::AnswerError;
use crate::embedder::token_count;
use crate::retriever::ContextSnippet;

pub const DEFAULT_TOKEN_BUDGET: usize = 8000;

const INSTRUCTIONS: &str = "\
Answer only from the references above.
When the answer is a number, give the exact value together with its units.
When the references do not contain enough evidence, set is_blank=true.

Reply with a JSON object with fields:
- answer: the answer in plain language
- answer_value: the extracted numeric or categorical value
- ref_id: list of document IDs supporting the answer
- explanation: short reasoning (optional)
- is_blank: true when the references cannot answer the question";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrder {
    #[default]
    ContextFirst,
    QuestionFirst,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    /// `[ref_id=<doc>] <text>` lines for text snippets.
    pub context: Vec<String>,
    /// The same format, for figure and table captions.
    pub media: Vec<String>,
    pub question: String,
    pub instructions: String,
    pub order: PromptOrder,
    /// Whitespace tokens across `context` and `media`.
    pub context_tokens: usize,
    pub retained_snippets: usize,
    pub dropped_snippets: usize,
    /// Document labels cited by at least one retained snippet.
    pub doc_ids: BTreeSet<String>,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        let section = |title: &str, lines: &[String]| {
            let body = if lines.is_empty() { "(none)".to_string() } else { lines.join("\n") };
            format!("## {title}\n{body}\n")
        };
        let documents = section("Referenced Documents", &self.context);
        let media = section("Referenced Media", &self.media);
        let question = format!("## Question\n{}\n", self.question);
        let instructions = format!("## Instructions\n{}\n", self.instructions);
        let parts = match self.order {
            PromptOrder::ContextFirst => [documents, media, question, instructions],
            PromptOrder::QuestionFirst => [question, instructions, documents, media],
        };
        parts.join("\n")
    }
}

pub fn render_snippet(snippet: &ContextSnippet) -> String {
    format!("[ref_id={}] {}", snippet.doc_id, snippet.text)
}

/// Lays out snippets under a whitespace-token budget.
///
/// Snippets sharing a `group` (a hit and its expanded parent) are kept or
/// dropped together. Groups are admitted in order of first appearance until
/// the next one would overflow; everything after it is dropped.
pub fn build_prompt(
    snippets: &[ContextSnippet],
    question: &str,
    order: PromptOrder,
    token_budget: usize,
) -> Result<PromptBundle, AnswerError> {
    if token_budget == 0 {
        return Err(AnswerError::BudgetTooSmall { needed: 0, budget: 0 });
    }
    let mut units: Vec<(usize, Vec<&ContextSnippet>)> = Vec::new();
    for s in snippets {
        match units.iter_mut().find(|(g, _)| *g == s.group) {
            Some((_, members)) => members.push(s),
            None => units.push((s.group, vec![s])),
        }
    }

    let mut bundle = PromptBundle {
        context: Vec::new(),
        media: Vec::new(),
        question: question.to_string(),
        instructions: INSTRUCTIONS.to_string(),
        order,
        context_tokens: 0,
        retained_snippets: 0,
        dropped_snippets: 0,
        doc_ids: BTreeSet::new(),
    };
    let mut full = false;
    for (i, (_, members)) in units.iter().enumerate() {
        let lines: Vec<(String, bool)> = members.iter().map(|s| (render_snippet(s), s.is_image)).collect();
        let cost: usize = lines.iter().map(|(l, _)| token_count(l)).sum();
        if full || bundle.context_tokens + cost > token_budget {
            if i == 0 {
                return Err(AnswerError::BudgetTooSmall { needed: cost, budget: token_budget });
            }
            full = true;
            bundle.dropped_snippets += members.len();
            continue;
        }
        bundle.context_tokens += cost;
        bundle.retained_snippets += members.len();
        for ((line, is_image), s) in lines.into_iter().zip(members) {
            bundle.doc_ids.insert(s.doc_id.clone());
            if is_image {
                bundle.media.push(line);
            } else {
                bundle.context.push(line);
            }
        }
    }
    Ok(bundle)
}
