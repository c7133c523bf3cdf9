use std::fmt;

use serde::{Deserialize, Serialize};

use super::score::numeric_match;
use crate::answerer::AnswerRecord;
use crate::ensembler::{normalize_with, NormalizedAnswer, UnitTable};

/// Rounding errors stop at this relative error.
pub const ROUNDING_LIMIT: f64 = 0.10;
/// Allowed deviation of the ratio from a power of ten.
pub const POWER_OF_TEN_TOLERANCE: f64 = 0.05;
pub const POWER_OF_TEN_RANGE: std::ops::RangeInclusive<i32> = -9..=9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    FalsePositive,
    FalseNegative,
    UnitConversion,
    RoundingCalc,
    ValueSelection,
    ReferenceMismatch,
    TypeMismatch,
    CategoricalMismatch,
    Correct,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 9] = [
        ErrorCategory::FalsePositive,
        ErrorCategory::FalseNegative,
        ErrorCategory::UnitConversion,
        ErrorCategory::RoundingCalc,
        ErrorCategory::ValueSelection,
        ErrorCategory::ReferenceMismatch,
        ErrorCategory::TypeMismatch,
        ErrorCategory::CategoricalMismatch,
        ErrorCategory::Correct,
    ];

    /// Machine label, e.g. `rounding_calc`.
    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::FalsePositive => "false_positive",
            ErrorCategory::FalseNegative => "false_negative",
            ErrorCategory::UnitConversion => "unit_conversion",
            ErrorCategory::RoundingCalc => "rounding_calc",
            ErrorCategory::ValueSelection => "value_selection",
            ErrorCategory::ReferenceMismatch => "reference_mismatch",
            ErrorCategory::TypeMismatch => "type_mismatch",
            ErrorCategory::CategoricalMismatch => "categorical_mismatch",
            ErrorCategory::Correct => "correct",
        }
    }

    /// Human-readable name used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            ErrorCategory::FalsePositive => "False positive",
            ErrorCategory::FalseNegative => "False negative",
            ErrorCategory::UnitConversion => "Unit conversion",
            ErrorCategory::RoundingCalc => "Rounding/calculation",
            ErrorCategory::ValueSelection => "Value selection",
            ErrorCategory::ReferenceMismatch => "Reference mismatch",
            ErrorCategory::TypeMismatch => "Type mismatch",
            ErrorCategory::CategoricalMismatch => "Categorical mismatch",
            ErrorCategory::Correct => "Correct",
        }
    }

    pub fn is_error(self) -> bool {
        self != ErrorCategory::Correct
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Relative error and ratio of a numeric prediction; `None` when the truth
/// is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub epsilon: f64,
    pub ratio: f64,
}

pub fn error_metrics(pred: f64, truth: f64) -> Option<ErrorMetrics> {
    (truth != 0.0).then(|| ErrorMetrics { epsilon: (pred - truth).abs() / truth.abs(), ratio: pred / truth })
}

/// True when `ratio` lies within ±5% of 10^n for some n in -9..=9, n ≠ 0.
pub fn near_power_of_ten(ratio: f64) -> bool {
    POWER_OF_TEN_RANGE.filter(|&n| n != 0).any(|n| {
        let p = 10f64.powi(n);
        (ratio - p).abs() <= (POWER_OF_TEN_TOLERANCE + 1e-9) * p
    })
}

pub fn classify_error(pred: &AnswerRecord, truth: &AnswerRecord) -> ErrorCategory {
    classify_with(pred, truth, &UnitTable::default())
}

/// Assigns exactly one category: abstention checks first, then the value
/// comparison, and only a correct value reaches the reference check.
pub fn classify_with(pred: &AnswerRecord, truth: &AnswerRecord, units: &UnitTable) -> ErrorCategory {
    use NormalizedAnswer::*;
    let p = normalize_with(pred, units);
    let t = normalize_with(truth, units);
    let value_ok = match (&p, &t) {
        (Blank, Blank) => return ErrorCategory::Correct,
        (_, Blank) => return ErrorCategory::FalsePositive,
        (Blank, _) => return ErrorCategory::FalseNegative,
        (Numeric(pv), Numeric(tv)) => {
            if numeric_match(*pv, *tv) {
                true
            } else {
                return match error_metrics(*pv, *tv) {
                    Some(m) if near_power_of_ten(m.ratio) => ErrorCategory::UnitConversion,
                    Some(m) if m.epsilon <= ROUNDING_LIMIT => ErrorCategory::RoundingCalc,
                    _ => ErrorCategory::ValueSelection,
                };
            }
        }
        (Categorical(a), Categorical(b)) => {
            if a == b {
                true
            } else {
                return ErrorCategory::CategoricalMismatch;
            }
        }
        _ => return ErrorCategory::TypeMismatch,
    };
    debug_assert!(value_ok);
    if pred.ref_id == truth.ref_id {
        ErrorCategory::Correct
    } else {
        ErrorCategory::ReferenceMismatch
    }
}
