use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A numeric or categorical extracted answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerValue::Number(x) => write!(f, "{x}"),
            AnswerValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(default)]
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_value: Option<AnswerValue>,
    #[serde(default)]
    pub ref_id: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default)]
    pub is_blank: bool,
    /// Set when the model output could not be parsed and the record is a
    /// stand-in abstention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
}

impl AnswerRecord {
    pub fn blank() -> Self {
        Self { is_blank: true, ..Self::default() }
    }

    pub fn answered(answer: &str, value: AnswerValue, refs: &[&str]) -> Self {
        Self {
            answer: answer.to_string(),
            answer_value: Some(value),
            ref_id: refs.iter().map(|r| r.to_string()).collect(),
            ..Self::default()
        }
    }

    pub(crate) fn parse_failure(reason: String) -> Self {
        Self { parse_error: Some(reason), ..Self::blank() }
    }

    /// Enforces the blank invariant: a blank record carries no value and no
    /// references.
    pub fn normalized(mut self) -> Self {
        if self.is_blank {
            self.answer_value = None;
            self.ref_id.clear();
        }
        self
    }

    /// The text the answer is judged on: `answer_value` when present,
    /// otherwise `answer`.
    pub fn value_text(&self) -> Option<String> {
        if self.is_blank {
            return None;
        }
        match &self.answer_value {
            Some(v) => Some(v.to_string()),
            None if !self.answer.trim().is_empty() => Some(self.answer.clone()),
            None => None,
        }
    }

    /// Compact JSON, the form models are asked to emit.
    pub fn render(&self) -> String {
        serde_json::to_string(self).expect("answer records serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no answer object in model output: {0}")]
pub struct ParseFailure(pub String);

const KNOWN_KEYS: [&str; 6] = ["answer", "answer_value", "ref_id", "explanation", "is_blank", "parse_error"];

/// Finds the first JSON object in `raw` that reads as an answer record.
/// Prose, code fences and trailing commentary are skipped. Field types are
/// read leniently: numbers may be quoted, `ref_id` may be a single string,
/// and `is_blank` may be the string `"true"`.
pub fn parse_answer(raw: &str) -> Result<AnswerRecord, ParseFailure> {
    let mut last_reason = "no JSON object found".to_string();
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else { continue };
        if !obj.keys().any(|k| KNOWN_KEYS.contains(&k.as_str())) {
            last_reason = "JSON object has none of the answer fields".into();
            continue;
        }
        match record_from_object(&obj) {
            Ok(rec) => return Ok(rec),
            Err(reason) => last_reason = reason,
        }
    }
    Err(ParseFailure(last_reason))
}

pub(crate) fn record_from_object(obj: &serde_json::Map<String, Value>) -> Result<AnswerRecord, String> {
    let text = |key: &str| -> Result<Option<String>, String> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(Value::Bool(b)) => Ok(Some(b.to_string())),
            Some(other) => Err(format!("field {key} has unexpected type: {other}")),
        }
    };
    let mut is_blank = match obj.get("is_blank") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) if s.trim().eq_ignore_ascii_case("true") => true,
        Some(Value::String(s)) if s.trim().eq_ignore_ascii_case("false") => false,
        Some(other) => return Err(format!("is_blank is not a boolean: {other}")),
    };
    let answer_value = match obj.get("answer_value") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => {
            Some(AnswerValue::Number(n.as_f64().filter(|x| x.is_finite()).ok_or("answer_value out of range")?))
        }
        Some(Value::String(s)) if s.trim() == "is_blank" => {
            is_blank = true;
            None
        }
        Some(Value::String(s)) => Some(AnswerValue::Text(s.clone())),
        Some(other) => return Err(format!("answer_value has unexpected type: {other}")),
    };
    let ref_id = match obj.get("ref_id") {
        None | Some(Value::Null) => BTreeSet::new(),
        Some(Value::String(s)) => {
            let s = s.trim();
            if s.is_empty() || s == "is_blank" {
                BTreeSet::new()
            } else {
                BTreeSet::from([s.to_string()])
            }
        }
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(|s| s.trim().to_string()).ok_or_else(|| format!("ref_id entry is not a string: {v}")))
            .filter(|r| r.as_ref().map_or(true, |s| !s.is_empty()))
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(format!("ref_id has unexpected type: {other}")),
    };
    Ok(AnswerRecord {
        answer: text("answer")?.unwrap_or_default(),
        answer_value,
        ref_id,
        explanation: text("explanation")?,
        is_blank,
        parse_error: text("parse_error")?,
    }
    .normalized())
}
