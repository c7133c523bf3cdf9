use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::classify::{classify_with, ErrorCategory};
use super::score::{score, ScoreBreakdown};
use super::{EvalError, LabeledRecord};
use crate::ensembler::UnitTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub scores: ScoreBreakdown,
    pub category: ErrorCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// In truth-file order.
    pub questions: Vec<QuestionResult>,
    pub mean: ScoreBreakdown,
    pub counts: BTreeMap<ErrorCategory, usize>,
}

fn index_by_id<'a>(records: &'a [LabeledRecord], side: &'static str) -> Result<HashMap<&'a str, &'a LabeledRecord>, EvalError> {
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if map.insert(r.question_id.as_str(), r).is_some() {
            return Err(EvalError::DuplicateQuestion { side, question_id: r.question_id.clone() });
        }
    }
    Ok(map)
}

/// Scores and classifies every question. Both files must cover exactly the
/// same question ids.
pub fn evaluate(predictions: &[LabeledRecord], truths: &[LabeledRecord], units: &UnitTable) -> Result<EvalReport, EvalError> {
    let preds = index_by_id(predictions, "predictions")?;
    let truth_ids = index_by_id(truths, "truth")?;
    if let Some(extra) = predictions.iter().find(|p| !truth_ids.contains_key(p.question_id.as_str())) {
        return Err(EvalError::MissingQuestion { side: "truth", question_id: extra.question_id.clone() });
    }
    let mut questions = Vec::with_capacity(truths.len());
    let mut counts = BTreeMap::new();
    for t in truths {
        let p = preds
            .get(t.question_id.as_str())
            .ok_or_else(|| EvalError::MissingQuestion { side: "predictions", question_id: t.question_id.clone() })?;
        let category = classify_with(&p.record, &t.record, units);
        *counts.entry(category).or_insert(0) += 1;
        questions.push(QuestionResult { question_id: t.question_id.clone(), scores: score(&p.record, &t.record, units), category });
    }
    let n = questions.len().max(1) as f64;
    let mean_of = |f: fn(&ScoreBreakdown) -> f64| questions.iter().map(|q| f(&q.scores)).sum::<f64>() / n;
    let mean = ScoreBreakdown {
        value: mean_of(|s| s.value),
        refs: mean_of(|s| s.refs),
        hallucination: mean_of(|s| s.hallucination),
        final_score: mean_of(|s| s.final_score),
    };
    Ok(EvalReport { questions, mean, counts })
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.questions.len()
    }

    pub fn correct(&self) -> usize {
        self.counts.get(&ErrorCategory::Correct).copied().unwrap_or(0)
    }

    pub fn errors(&self) -> usize {
        self.total() - self.correct()
    }

    /// Error categories with their share of all errors, most frequent first
    /// (ties in category order).
    pub fn error_distribution(&self) -> Vec<(ErrorCategory, usize, f64)> {
        let errors = self.errors();
        let mut rows: Vec<(ErrorCategory, usize, f64)> = self
            .counts
            .iter()
            .filter(|(c, _)| c.is_error())
            .map(|(&c, &n)| (c, n, 100.0 * n as f64 / errors as f64))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows
    }

    /// Per-question scores as TSV.
    pub fn scores_tsv(&self) -> String {
        let mut out = String::from("question_id\tvalue\tref\thallucination\tfinal\tcategory\n");
        for q in &self.questions {
            let s = &q.scores;
            let _ = writeln!(
                out,
                "{}\t{:.0}\t{:.6}\t{:.0}\t{:.6}\t{}",
                q.question_id, s.value, s.refs, s.hallucination, s.final_score, q.category
            );
        }
        out
    }

    /// Error distribution as TSV; empty body when everything is correct.
    pub fn errors_tsv(&self) -> String {
        let mut out = String::from("category\tname\tcount\tpercent_of_errors\n");
        for (c, n, pct) in self.error_distribution() {
            let _ = writeln!(out, "{}\t{}\t{n}\t{pct:.2}", c.label(), c.display_name());
        }
        out
    }

    pub fn summary(&self) -> String {
        let total = self.total();
        let pct = |n: usize| if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 };
        let mut out = String::new();
        let _ = writeln!(out, "questions: {total}");
        let _ = writeln!(out, "value score: {:.6}", self.mean.value);
        let _ = writeln!(out, "reference score: {:.6}", self.mean.refs);
        let _ = writeln!(out, "hallucination score: {:.6}", self.mean.hallucination);
        let _ = writeln!(out, "final score: {:.6}", self.mean.final_score);
        let _ = writeln!(out, "correct: {} ({:.2}%)", self.correct(), pct(self.correct()));
        let _ = writeln!(out, "errors: {} ({:.2}%)", self.errors(), pct(self.errors()));
        for (c, n, share) in self.error_distribution() {
            let _ = writeln!(out, "  {}: {n} ({share:.2}% of errors)", c.display_name());
        }
        out
    }
}
