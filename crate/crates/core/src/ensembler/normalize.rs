use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::answerer::{AnswerRecord, AnswerValue};

/// Relative tolerance under which two numbers count as the same answer.
pub const NUMERIC_TOLERANCE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum NormalizedAnswer {
    Numeric(f64),
    Categorical(String),
    Blank,
}

impl NormalizedAnswer {
    pub fn is_blank(&self) -> bool {
        matches!(self, NormalizedAnswer::Blank)
    }

    /// Same answer: numbers within the relative tolerance, text by key.
    pub fn matches(&self, other: &NormalizedAnswer) -> bool {
        match (self, other) {
            (NormalizedAnswer::Numeric(a), NormalizedAnswer::Numeric(b)) => numbers_close(*a, *b),
            (NormalizedAnswer::Categorical(a), NormalizedAnswer::Categorical(b)) => a == b,
            (NormalizedAnswer::Blank, NormalizedAnswer::Blank) => true,
            _ => false,
        }
    }
}

/// `|a - b| / max(|a|, |b|) <= 0.1%`; two zeros are equal.
pub fn numbers_close(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale == 0.0 || (a - b).abs() / scale <= NUMERIC_TOLERANCE
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?P<sign>[+-]?)(?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)\s*(?P<scale>(?i:thousand|million|billion|trillion)s?)?\s*(?P<unit>\S.*?)?\s*$",
    )
    .expect("valid number pattern")
});

/// Multipliers from unit spellings to a canonical base unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTable {
    /// Case-sensitive symbols such as `MW` or `mL`.
    symbols: BTreeMap<String, f64>,
    /// Lowercase words such as `kilowatts`.
    words: BTreeMap<String, f64>,
}

impl Default for UnitTable {
    fn default() -> Self {
        let mut symbols = BTreeMap::new();
        let prefixes = [("", 1.0), ("k", 1e3), ("M", 1e6), ("G", 1e9), ("m", 1e-3)];
        for base in ["W", "Wh", "L", "g"] {
            for (p, f) in prefixes {
                symbols.insert(format!("{p}{base}"), f);
            }
        }
        symbols.insert("l".into(), 1.0);
        symbols.insert("ml".into(), 1e-3);
        symbols.insert("%".into(), 1.0);

        let mut words = BTreeMap::new();
        let word_prefixes = [("", 1.0), ("kilo", 1e3), ("mega", 1e6), ("giga", 1e9), ("milli", 1e-3)];
        for base in ["watt", "watt-hour", "watt hour", "liter", "litre", "gram"] {
            for (p, f) in word_prefixes {
                words.insert(format!("{p}{base}"), f);
                words.insert(format!("{p}{base}s"), f);
            }
        }
        words.insert("percent".into(), 1.0);
        Self { symbols, words }
    }
}

impl UnitTable {
    /// Adds or replaces a unit. Spellings that are all lowercase match
    /// case-insensitively; others match exactly.
    pub fn with_unit(mut self, spelling: &str, factor: f64) -> Self {
        if spelling.chars().any(char::is_uppercase) {
            self.symbols.insert(spelling.to_string(), factor);
        } else {
            self.words.insert(spelling.to_string(), factor);
        }
        self
    }

    pub fn factor(&self, unit: &str) -> Option<f64> {
        self.symbols.get(unit).or_else(|| self.words.get(&unit.to_lowercase())).copied()
    }
}

fn scale_factor(word: &str) -> f64 {
    match word.to_lowercase().trim_end_matches('s') {
        "thousand" => 1e3,
        "million" => 1e6,
        "billion" => 1e9,
        "trillion" => 1e12,
        _ => 1.0,
    }
}

/// Parses plain decimals, scientific notation, thousands separators, scale
/// words and known unit suffixes. `None` when any part is unrecognized.
pub fn parse_numeric(text: &str, units: &UnitTable) -> Option<f64> {
    let caps = NUMBER.captures(text.trim())?;
    let mut value: f64 = caps["num"].replace(',', "").parse().ok()?;
    if &caps["sign"] == "-" {
        value = -value;
    }
    if let Some(scale) = caps.name("scale") {
        value *= scale_factor(scale.as_str());
    }
    if let Some(unit) = caps.name("unit") {
        value *= units.factor(unit.as_str())?;
    }
    value.is_finite().then_some(value)
}

/// Lowercased, trimmed, whitespace-collapsed.
pub fn categorical_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn normalize_answer(rec: &AnswerRecord) -> NormalizedAnswer {
    normalize_with(rec, &UnitTable::default())
}

pub fn normalize_with(rec: &AnswerRecord, units: &UnitTable) -> NormalizedAnswer {
    if rec.is_blank {
        return NormalizedAnswer::Blank;
    }
    match &rec.answer_value {
        Some(AnswerValue::Number(x)) => NormalizedAnswer::Numeric(*x),
        _ => match rec.value_text() {
            None => NormalizedAnswer::Blank,
            Some(text) => normalize_text(&text, units),
        },
    }
}

pub fn normalize_text(text: &str, units: &UnitTable) -> NormalizedAnswer {
    match parse_numeric(text, units) {
        Some(x) => NormalizedAnswer::Numeric(x),
        None => {
            let key = categorical_key(text);
            if key.is_empty() {
                NormalizedAnswer::Blank
            } else {
                NormalizedAnswer::Categorical(key)
            }
        }
    }
}
