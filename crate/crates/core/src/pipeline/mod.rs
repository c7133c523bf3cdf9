//! Batch wiring: corpus ingestion, index building, question answering over
//! a question file, and evaluation.

mod config;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answerer::{AnswerError, ChatClient, ReplayFile, RetrievalSession, ScriptedChat};
use crate::doctree::{load_tree, parse_plaintext, DocTreeError, DocumentTree, SegmentationRules};
use crate::embedder::{embed_tree, EmbedError, EncoderClient, MockEncoder};
use crate::ensembler::{run_ensemble, EnsembleOutcome};
use crate::evalkit::{evaluate, load_records, EvalError, EvalReport, LabeledRecord};
use crate::remote::{HttpChat, HttpEncoder};
use crate::retriever::{plan_queries, IdentityPlanner, LlmPlanner, PlannerClient, RetrievalHandles};
use crate::sparse::{build_bm25, Bm25Error, TokenizerConfig};
use crate::vectorstore::{Index, IndexError};

pub use config::{
    ChatSettings, ClientKind, ConfigError, EncoderSettings, EnsembleSettings, IndexSettings, PipelineConfig,
    RetrieverSettings, CHAT_TOKEN_ENV, CHAT_URL_ENV, ENCODER_TOKEN_ENV, ENCODER_URL_ENV,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Document { path: PathBuf, source: DocTreeError },
    #[error("no .txt, .md or .doctree.json documents in {0}")]
    NoDocuments(PathBuf),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Bm25(#[from] Bm25Error),
    #[error("question {question_id}: {source}")]
    Answer { question_id: String, source: AnswerError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("questions file line {line}: {message}")]
    Questions { line: usize, message: String },
    #[error("index was built with encoder {index}, but the configured encoder is {configured}")]
    EncoderMismatch { index: String, configured: String },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl PipelineError {
    /// Configuration and remote-client failures, as opposed to bad data.
    pub fn is_config_or_client(&self) -> bool {
        match self {
            PipelineError::Config(_) | PipelineError::EncoderMismatch { .. } => true,
            PipelineError::Embed(EmbedError::Client(_)) => true,
            PipelineError::Answer { source, .. } => matches!(
                source,
                AnswerError::Client(_)
                    | AnswerError::BudgetTooSmall { .. }
                    | AnswerError::Retrieval(crate::retriever::RetrievalError::Encoder(EmbedError::Client(_)))
            ),
            _ => false,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

pub fn segmentation_rules(cfg: &IndexSettings) -> Result<SegmentationRules, ConfigError> {
    let mut rules = cfg.abbreviations.iter().fold(SegmentationRules::default(), |r, a| r.with_abbreviation(a));
    if let Some(p) = &cfg.heading_pattern {
        rules = rules.with_heading_pattern(p).map_err(|e| ConfigError::Invalid(format!("index.heading_pattern: {e}")))?;
    }
    Ok(rules)
}

/// Document label derived from a file name: the stem with anything other
/// than letters, digits, `-`, `_` and `.` replaced by `_`.
pub fn doc_id_from_path(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name
        .strip_suffix(".doctree.json")
        .or_else(|| name.rsplit_once('.').map(|(s, _)| s))
        .unwrap_or(&name);
    let id: String =
        stem.chars().map(|c| if c.is_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect();
    if id.is_empty() {
        "_".into()
    } else {
        id
    }
}

/// Loads every document in `dir`, in file-name order. `.doctree.json` files
/// are read as prebuilt trees; `.txt` and `.md` files are segmented.
pub fn load_corpus(dir: &Path, rules: &SegmentationRules) -> Result<Vec<DocumentTree>, PipelineError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(format!("cannot read {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut trees = Vec::new();
    for path in paths {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let doc_err = |source| PipelineError::Document { path: path.clone(), source };
        let tree = if name.ends_with(".doctree.json") {
            load_tree(&path).map_err(doc_err)?
        } else if name.ends_with(".txt") || name.ends_with(".md") {
            let text = std::fs::read_to_string(&path).map_err(io_err(format!("cannot read {}", path.display())))?;
            parse_plaintext(&doc_id_from_path(&path), &text, rules).map_err(doc_err)?
        } else {
            continue;
        };
        trees.push(tree);
    }
    if trees.is_empty() {
        return Err(PipelineError::NoDocuments(dir.to_path_buf()));
    }
    Ok(trees)
}

pub fn make_encoder(cfg: &PipelineConfig) -> Result<Box<dyn EncoderClient>, ConfigError> {
    Ok(match cfg.encoder.kind {
        ClientKind::Mock => Box::new(MockEncoder::new(cfg.encoder.dim, cfg.encoder.seed)),
        ClientKind::Http => {
            let endpoint = cfg
                .encoder_endpoint()
                .ok_or_else(|| ConfigError::Invalid(format!("encoder.endpoint or ${ENCODER_URL_ENV} required")))?;
            Box::new(HttpEncoder::new(&endpoint, std::env::var(ENCODER_TOKEN_ENV).ok(), cfg.encoder.dim))
        }
    })
}

pub struct ChatClients {
    pub chat: Arc<dyn ChatClient>,
    pub planner: Box<dyn PlannerClient>,
}

pub fn make_chat(cfg: &PipelineConfig) -> Result<ChatClients, ConfigError> {
    match cfg.chat.kind {
        ClientKind::Mock => {
            let (chat, planner): (ScriptedChat, Box<dyn PlannerClient>) = match &cfg.chat.replay {
                Some(path) => {
                    let (chat, planner) = ReplayFile::load(path)
                        .map_err(|e| ConfigError::Invalid(format!("chat.replay {}: {e}", path.display())))?
                        .into_clients();
                    (chat, Box::new(planner))
                }
                None => (ScriptedChat::new(), Box::new(IdentityPlanner)),
            };
            Ok(ChatClients { chat: Arc::new(chat), planner })
        }
        ClientKind::Http => {
            let endpoint = cfg
                .chat_endpoint()
                .ok_or_else(|| ConfigError::Invalid(format!("chat.endpoint or ${CHAT_URL_ENV} required")))?;
            let chat: Arc<dyn ChatClient> = Arc::new(HttpChat::new(&endpoint, std::env::var(CHAT_TOKEN_ENV).ok()));
            let planner = Box::new(LlmPlanner::new(chat.clone(), cfg.answerer.temperature));
            Ok(ChatClients { chat, planner })
        }
    }
}

fn thread_pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool")
}

/// Parses, embeds and indexes a document directory.
pub fn build_corpus_index(
    dir: &Path,
    cfg: &PipelineConfig,
    encoder: &dyn EncoderClient,
) -> Result<(Index, Vec<DocumentTree>), PipelineError> {
    let rules = segmentation_rules(&cfg.index)?;
    let trees = load_corpus(dir, &rules)?;
    let embeddings = thread_pool(cfg.jobs).install(|| {
        trees.iter().map(|t| embed_tree(t, encoder)).collect::<Result<Vec<_>, _>>()
    })?;
    let bm25 = if cfg.index.bm25 {
        let mut tok = TokenizerConfig::default();
        if let Some(path) = &cfg.index.stopwords {
            tok = TokenizerConfig::without_stopwords().with_stopword_file(path)?;
        }
        Some(build_bm25(&trees, tok, cfg.index.bm25_k1, cfg.index.bm25_b)?)
    } else {
        None
    };
    let index = Index::build(&trees, &embeddings, &encoder.id(), bm25)?;
    Ok((index, trees))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub question_id: String,
    pub question: String,
}

/// JSON Lines of `{question_id, question}`; ids must be unique.
pub fn parse_questions(text: &str) -> Result<Vec<Question>, PipelineError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| PipelineError::Questions { line: i + 1, message };
        let q: Question = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        if q.question_id.trim().is_empty() || q.question.trim().is_empty() {
            return Err(fail("empty question_id or question".into()));
        }
        if !seen.insert(q.question_id.clone()) {
            return Err(fail(format!("duplicate question_id {}", q.question_id)));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>, PipelineError> {
    parse_questions(&std::fs::read_to_string(path).map_err(io_err(format!("cannot read {}", path.display())))?)
}

/// Everything recorded about one answered question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionAudit {
    pub question_id: String,
    pub question: String,
    pub queries: Vec<String>,
    #[serde(flatten)]
    pub outcome: EnsembleOutcome,
}

/// Answers every question: plan once, then `ensemble.size` runs with
/// retries, then vote. Results keep the question order.
pub fn answer_questions(
    questions: &[Question],
    index: &Index,
    encoder: &dyn EncoderClient,
    clients: &ChatClients,
    cfg: &PipelineConfig,
) -> Result<Vec<QuestionAudit>, PipelineError> {
    if index.header().encoder != encoder.id() {
        return Err(PipelineError::EncoderMismatch { index: index.header().encoder.clone(), configured: encoder.id() });
    }
    if cfg.retriever.bm25_topk > 0 && index.bm25().is_none() {
        tracing::warn!("retriever.bm25_topk is set but the index has no BM25 section");
    }
    let handles = RetrievalHandles { index, bm25: index.bm25(), encoder };
    let retriever = cfg.retriever_config();
    let units = cfg.ensemble.unit_table();
    let vote_cfg = cfg.ensemble.vote_config();
    thread_pool(cfg.jobs).install(|| {
        questions
            .par_iter()
            .map(|q| {
                let queries = plan_queries(&q.question, retriever.n_queries, clients.planner.as_ref());
                let session = RetrievalSession::new(&q.question, queries.clone(), retriever.clone(), handles);
                let outcome = run_ensemble(
                    &q.question_id,
                    cfg.ensemble.size,
                    &session,
                    clients.chat.as_ref(),
                    &cfg.answerer,
                    &vote_cfg,
                    &units,
                    cfg.seed,
                )
                .map_err(|source| PipelineError::Answer { question_id: q.question_id.clone(), source })?;
                Ok(QuestionAudit { question_id: q.question_id.clone(), question: q.question.clone(), queries, outcome })
            })
            .collect()
    })
}

pub fn predictions(audits: &[QuestionAudit]) -> Vec<LabeledRecord> {
    audits
        .iter()
        .map(|a| LabeledRecord { question_id: a.question_id.clone(), record: a.outcome.record.clone() })
        .collect()
}

pub fn render_audit(audits: &[QuestionAudit]) -> String {
    audits.iter().map(|a| serde_json::to_string(a).expect("audit serializes") + "\n").collect()
}

pub fn evaluate_files(predictions: &Path, truth: &Path, cfg: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    let preds = load_records(predictions)?;
    let truths = load_records(truth)?;
    Ok(evaluate(&preds, &truths, &cfg.ensemble.unit_table())?)
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    crate::vectorstore::write_atomic(path, bytes).map_err(io_err(format!("cannot write {}", path.display())))
}
