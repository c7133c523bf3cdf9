use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answerer::AnswerConfig;
use crate::ensembler::{UnitTable, VoteConfig, VoteMode};
use crate::retriever::{DedupMode, RerankStrategy, RetrieverConfig};
use crate::sparse::{DEFAULT_B, DEFAULT_K1};

pub const ENCODER_URL_ENV: &str = "TREERAG_ENCODER_URL";
pub const ENCODER_TOKEN_ENV: &str = "TREERAG_ENCODER_TOKEN";
pub const CHAT_URL_ENV: &str = "TREERAG_CHAT_URL";
pub const CHAT_TOKEN_ENV: &str = "TREERAG_CHAT_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    #[default]
    Mock,
    Http,
}

impl ClientKind {
    fn as_str(self) -> &'static str {
        match self {
            ClientKind::Mock => "mock",
            ClientKind::Http => "http",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    pub kind: ClientKind,
    pub dim: usize,
    /// Mock encoder only.
    pub seed: u64,
    pub endpoint: Option<String>,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self { kind: ClientKind::Mock, dim: 512, seed: 0, endpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChatSettings {
    pub kind: ClientKind,
    pub endpoint: Option<String>,
    /// Scripted responses for the mock client.
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSettings {
    pub bm25: bool,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub stopwords: Option<PathBuf>,
    /// Extra abbreviations that do not end a sentence.
    pub abbreviations: Vec<String>,
    /// Regex for heading lines in plain text, replacing Markdown `#` headings.
    pub heading_pattern: Option<String>,
}

impl Default for IndexSettings {
    fn default() -> Self {
        Self {
            bm25: true,
            bm25_k1: DEFAULT_K1,
            bm25_b: DEFAULT_B,
            stopwords: None,
            abbreviations: Vec::new(),
            heading_pattern: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverSettings {
    pub n_queries: usize,
    pub topk: usize,
    /// 0 keeps every candidate.
    pub topk_final: usize,
    pub rerank: RerankStrategy,
    pub alpha: f64,
    pub dedup: DedupMode,
    pub bm25_topk: usize,
}

impl Default for RetrieverSettings {
    fn default() -> Self {
        let d = RetrieverConfig::default();
        Self {
            n_queries: d.n_queries,
            topk: d.topk,
            topk_final: d.topk_final.unwrap_or(0),
            rerank: d.rerank,
            alpha: d.alpha,
            dedup: d.dedup,
            bm25_topk: d.bm25_topk,
        }
    }
}

impl RetrieverSettings {
    pub fn to_config(&self) -> RetrieverConfig {
        RetrieverConfig {
            n_queries: self.n_queries,
            topk: self.topk,
            topk_final: (self.topk_final > 0).then_some(self.topk_final),
            rerank: self.rerank,
            alpha: self.alpha,
            dedup: self.dedup,
            bm25_topk: self.bm25_topk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSettings {
    pub size: usize,
    pub vote_mode: VoteMode,
    pub ignore_blank: bool,
    /// Extra unit spellings and their multipliers, e.g. `{ t = 1e6 }`.
    pub units: BTreeMap<String, f64>,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        let v = VoteConfig::default();
        Self { size: 1, vote_mode: v.mode, ignore_blank: v.ignore_blank, units: BTreeMap::new() }
    }
}

impl EnsembleSettings {
    pub fn vote_config(&self) -> VoteConfig {
        VoteConfig { mode: self.vote_mode, ignore_blank: self.ignore_blank }
    }

    pub fn unit_table(&self) -> UnitTable {
        self.units.iter().fold(UnitTable::default(), |t, (k, &v)| t.with_unit(k, v))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses one per CPU.
    pub jobs: usize,
    pub encoder: EncoderSettings,
    pub chat: ChatSettings,
    pub index: IndexSettings,
    pub retriever: RetrieverSettings,
    pub answerer: AnswerConfig,
    pub ensemble: EnsembleSettings,
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn toml_f64(x: f64) -> String {
    format!("{x:?}")
}

fn serde_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(toml_str)).unwrap_or_default()
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.encoder.dim == 0 {
            return bad("encoder.dim must be positive");
        }
        if self.retriever.n_queries == 0 || self.retriever.topk == 0 {
            return bad("retriever.n_queries and retriever.topk must be positive");
        }
        if !(0.0..=1.0).contains(&self.retriever.alpha) {
            return bad("retriever.alpha must lie in [0, 1]");
        }
        if !(self.index.bm25_k1 > 0.0 && self.index.bm25_k1.is_finite()) || !(0.0..=1.0).contains(&self.index.bm25_b) {
            return bad("index.bm25_k1 must be positive and index.bm25_b in [0, 1]");
        }
        if self.answerer.token_budget == 0 {
            return bad("answerer.token_budget must be positive");
        }
        if !(self.answerer.temperature >= 0.0 && self.answerer.temperature.is_finite()) {
            return bad("answerer.temperature must be a non-negative number");
        }
        if self.ensemble.size == 0 {
            return bad("ensemble.size must be at least 1");
        }
        if self.ensemble.units.values().any(|f| !(f.is_finite() && *f != 0.0)) {
            return bad("ensemble.units multipliers must be finite and non-zero");
        }
        Ok(())
    }

    /// Endpoint from the config, else from the environment.
    pub fn encoder_endpoint(&self) -> Option<String> {
        self.encoder.endpoint.clone().or_else(|| std::env::var(ENCODER_URL_ENV).ok())
    }

    pub fn chat_endpoint(&self) -> Option<String> {
        self.chat.endpoint.clone().or_else(|| std::env::var(CHAT_URL_ENV).ok())
    }

    pub fn retriever_config(&self) -> RetrieverConfig {
        self.retriever.to_config()
    }

    /// The effective configuration as commented TOML that parses back to
    /// an equal value.
    pub fn to_toml(&self) -> String {
        let opt_str = |key: &str, v: &Option<String>| match v {
            Some(s) => format!("{key} = {}\n", toml_str(s)),
            None => format!("# {key} = \"\"\n"),
        };
        let opt_path = |key: &str, v: &Option<PathBuf>| opt_str(key, &v.as_ref().map(|p| p.display().to_string()));
        let mut o = String::new();
        let _ = writeln!(o, "# treerag pipeline configuration");
        let _ = writeln!(o, "# root seed for every per-question, per-run seed");
        let _ = writeln!(o, "seed = {}", self.seed);
        let _ = writeln!(o, "# worker threads, 0 = one per CPU");
        let _ = writeln!(o, "jobs = {}", self.jobs);
        let _ = writeln!(o);
        let _ = writeln!(o, "# encoder: mock | http (endpoint falls back to ${ENCODER_URL_ENV}, token from ${ENCODER_TOKEN_ENV})");
        let _ = writeln!(o, "encoder.kind = {}", toml_str(self.encoder.kind.as_str()));
        let _ = writeln!(o, "encoder.dim = {}", self.encoder.dim);
        let _ = writeln!(o, "encoder.seed = {}", self.encoder.seed);
        o += &opt_str("encoder.endpoint", &self.encoder.endpoint);
        let _ = writeln!(o);
        let _ = writeln!(o, "# chat: mock | http (endpoint falls back to ${CHAT_URL_ENV}, token from ${CHAT_TOKEN_ENV})");
        let _ = writeln!(o, "chat.kind = {}", toml_str(self.chat.kind.as_str()));
        o += &opt_str("chat.endpoint", &self.chat.endpoint);
        o += &opt_path("chat.replay", &self.chat.replay);
        let _ = writeln!(o);
        let _ = writeln!(o, "index.bm25 = {}", self.index.bm25);
        let _ = writeln!(o, "index.bm25_k1 = {}", toml_f64(self.index.bm25_k1));
        let _ = writeln!(o, "index.bm25_b = {}", toml_f64(self.index.bm25_b));
        o += &opt_path("index.stopwords", &self.index.stopwords);
        let abbrs: Vec<String> = self.index.abbreviations.iter().map(|a| toml_str(a)).collect();
        let _ = writeln!(o, "index.abbreviations = [{}]", abbrs.join(", "));
        o += &opt_str("index.heading_pattern", &self.index.heading_pattern);
        let _ = writeln!(o);
        let r = &self.retriever;
        let _ = writeln!(o, "retriever.n_queries = {}", r.n_queries);
        let _ = writeln!(o, "retriever.topk = {}", r.topk);
        let _ = writeln!(o, "# 0 keeps every candidate");
        let _ = writeln!(o, "retriever.topk_final = {}", r.topk_final);
        let _ = writeln!(o, "# frequency | score | combined");
        let _ = writeln!(o, "retriever.rerank = {}", serde_name(&r.rerank));
        let _ = writeln!(o, "retriever.alpha = {}", toml_f64(r.alpha));
        let _ = writeln!(o, "# none | id | tree");
        let _ = writeln!(o, "retriever.dedup = {}", serde_name(&r.dedup));
        let _ = writeln!(o, "retriever.bm25_topk = {}", r.bm25_topk);
        let _ = writeln!(o);
        let a = &self.answerer;
        let _ = writeln!(o, "# context_first | question_first");
        let _ = writeln!(o, "answerer.order = {}", serde_name(&a.order));
        let _ = writeln!(o, "answerer.token_budget = {}", a.token_budget);
        let _ = writeln!(o, "answerer.temperature = {}", toml_f64(a.temperature));
        let _ = writeln!(o, "answerer.max_retries = {}", a.max_retries);
        let _ = writeln!(o);
        let e = &self.ensemble;
        let _ = writeln!(o, "ensemble.size = {}", e.size);
        let _ = writeln!(o, "# independent | answer_priority | ref_priority | union | intersection");
        let _ = writeln!(o, "ensemble.vote_mode = {}", serde_name(&e.vote_mode));
        let _ = writeln!(o, "ensemble.ignore_blank = {}", e.ignore_blank);
        let units: Vec<String> = e.units.iter().map(|(k, v)| format!("{} = {}", toml_str(k), toml_f64(*v))).collect();
        let _ = writeln!(o, "ensemble.units = {{ {} }}", units.join(", "));
        o
    }
}
