use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::answerer::AnswerRecord;
use crate::ensembler::{normalize_with, NormalizedAnswer, UnitTable};

pub const VALUE_WEIGHT: f64 = 0.75;
pub const REF_WEIGHT: f64 = 0.15;
pub const HALLUCINATION_WEIGHT: f64 = 0.10;
/// Relative tolerance for a numeric answer to count as correct.
pub const VALUE_TOLERANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub value: f64,
    pub refs: f64,
    pub hallucination: f64,
    #[serde(rename = "final")]
    pub final_score: f64,
}

pub fn final_score(value: f64, refs: f64, hallucination: f64) -> ScoreBreakdown {
    ScoreBreakdown {
        value,
        refs,
        hallucination,
        final_score: VALUE_WEIGHT * value + REF_WEIGHT * refs + HALLUCINATION_WEIGHT * hallucination,
    }
}

/// Numeric match within the relative tolerance. A truth of exactly zero
/// only accepts an exact zero.
pub fn numeric_match(pred: f64, truth: f64) -> bool {
    if truth == 0.0 {
        pred == 0.0
    } else {
        (pred - truth).abs() / truth.abs() <= VALUE_TOLERANCE
    }
}

/// 1 when the prediction's value matches the truth. Against a blank truth,
/// only an abstention matches.
pub fn value_score(pred: &AnswerRecord, truth: &AnswerRecord) -> f64 {
    value_score_with(pred, truth, &UnitTable::default())
}

pub fn value_score_with(pred: &AnswerRecord, truth: &AnswerRecord, units: &UnitTable) -> f64 {
    let hit = match (normalize_with(pred, units), normalize_with(truth, units)) {
        (p, NormalizedAnswer::Blank) => p.is_blank(),
        (NormalizedAnswer::Numeric(p), NormalizedAnswer::Numeric(t)) => numeric_match(p, t),
        (NormalizedAnswer::Categorical(p), NormalizedAnswer::Categorical(t)) => p == t,
        _ => false,
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Jaccard similarity; two empty sets score 1.
pub fn ref_score(pred: &BTreeSet<String>, truth: &BTreeSet<String>) -> f64 {
    let union = pred.union(truth).count();
    if union == 0 {
        return 1.0;
    }
    pred.intersection(truth).count() as f64 / union as f64
}

/// 0 exactly when the truth is blank and the prediction answers anyway.
pub fn hallucination_score(pred: &AnswerRecord, truth: &AnswerRecord) -> f64 {
    hallucination_score_with(pred, truth, &UnitTable::default())
}

pub fn hallucination_score_with(pred: &AnswerRecord, truth: &AnswerRecord, units: &UnitTable) -> f64 {
    let truth_blank = normalize_with(truth, units).is_blank();
    let pred_blank = normalize_with(pred, units).is_blank();
    if truth_blank && !pred_blank {
        0.0
    } else {
        1.0
    }
}

pub fn score(pred: &AnswerRecord, truth: &AnswerRecord, units: &UnitTable) -> ScoreBreakdown {
    final_score(
        value_score_with(pred, truth, units),
        ref_score(&pred.ref_id, &truth.ref_id),
        hallucination_score_with(pred, truth, units),
    )
}
