//! Answer scoring (value, reference and hallucination components) and the
//! rule-based error classifier.

mod classify;
mod report;
mod score;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answerer::{record_from_object, AnswerRecord};

pub use classify::{
    classify_error, classify_with, error_metrics, near_power_of_ten, ErrorCategory, ErrorMetrics, POWER_OF_TEN_RANGE,
    POWER_OF_TEN_TOLERANCE, ROUNDING_LIMIT,
};
pub use report::{evaluate, EvalReport, QuestionResult};
pub use score::{
    final_score, hallucination_score, hallucination_score_with, numeric_match, ref_score, score, value_score,
    value_score_with, ScoreBreakdown, HALLUCINATION_WEIGHT, REF_WEIGHT, VALUE_TOLERANCE, VALUE_WEIGHT,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("question {question_id} missing from {side} file")]
    MissingQuestion { side: &'static str, question_id: String },
    #[error("question {question_id} appears more than once in {side} file")]
    DuplicateQuestion { side: &'static str, question_id: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a prediction or truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub question_id: String,
    #[serde(flatten)]
    pub record: AnswerRecord,
}

/// Parses JSON Lines; blank lines are skipped. Fields are read with the
/// same leniency as model output.
pub fn parse_records(text: &str) -> Result<Vec<LabeledRecord>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let fail = |message: String| EvalError::Parse { line: i + 1, message };
            let value: serde_json::Value = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
            let obj = value.as_object().ok_or_else(|| fail("expected a JSON object".into()))?;
            let question_id = match obj.get("question_id") {
                Some(serde_json::Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
                Some(serde_json::Value::Number(n)) => n.to_string(),
                _ => return Err(fail("missing question_id".into())),
            };
            let record = record_from_object(obj).map_err(fail)?;
            Ok(LabeledRecord { question_id, record })
        })
        .collect()
}

pub fn load_records(path: &Path) -> Result<Vec<LabeledRecord>, EvalError> {
    parse_records(&std::fs::read_to_string(path)?)
}

pub fn render_records(records: &[LabeledRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}
