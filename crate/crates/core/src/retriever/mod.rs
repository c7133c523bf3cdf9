//! Multi-query retrieval: plan → dense search per query → cross-query rerank
//! → dedup → BM25 append → truncate → parent expansion → final dedup.

mod planner;

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doctree::{Level, NodeId};
use crate::embedder::{EmbedError, EncoderClient};
use crate::sparse::{augment, Bm25Index};
use crate::vectorstore::{Index, IndexError, SearchFilter};

pub use planner::{
    parse_planner_output, plan_queries, planner_prompt, IdentityPlanner, LlmPlanner, PlannerClient,
    ScriptedPlanner,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("retrieval failure: {0}")]
    Encoder(#[from] EmbedError),
    #[error("retrieval failure: {0}")]
    Index(#[from] IndexError),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitSource {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub node: NodeId,
    /// Cosine similarity for dense hits, raw BM25 for sparse ones.
    pub score: f64,
    pub query_index: usize,
    pub source: HitSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankStrategy {
    Frequency,
    Score,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupMode {
    /// Keep cross-query duplicates.
    None,
    #[serde(rename = "id")]
    ById,
    Tree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankEntry {
    pub node: NodeId,
    /// Number of query lists that retrieved the node densely (1 for
    /// sparse-only entries).
    pub frequency: usize,
    /// Sum of the node's dense scores.
    pub total_score: f64,
    pub sparse_only: bool,
    /// Best raw sparse score, for sparse-only ordering.
    pub sparse_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnippet {
    pub node: NodeId,
    pub text: String,
    pub score: f64,
    pub doc_id: String,
    #[serde(default)]
    pub is_image: bool,
    /// Rank of the hit that brought this snippet in; a hit and its parent
    /// share a group.
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub n_queries: usize,
    pub topk: usize,
    /// `None` keeps every candidate.
    pub topk_final: Option<usize>,
    pub rerank: RerankStrategy,
    pub alpha: f64,
    pub dedup: DedupMode,
    pub bm25_topk: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            n_queries: 4,
            topk: 16,
            topk_final: Some(32),
            rerank: RerankStrategy::Combined,
            alpha: 0.5,
            dedup: DedupMode::ById,
            bm25_topk: 0,
        }
    }
}

/// Merges per-query hit lists.
///
/// Dense entries are ordered by the strategy (node id breaks remaining
/// ties); sparse-only entries follow all dense ones, by sparse score. Each
/// node's scores are summed in sorted order so the result does not depend on
/// the order of the input lists.
pub fn rerank(results: &[Vec<RetrievalHit>], strategy: RerankStrategy, alpha: f64) -> Vec<RerankEntry> {
    struct Acc {
        dense: Vec<f64>,
        sparse: f64,
    }
    let mut acc: HashMap<&NodeId, Acc> = HashMap::new();
    for list in results {
        let mut seen_here: HashSet<&NodeId> = HashSet::new();
        for hit in list {
            if !seen_here.insert(&hit.node) {
                continue;
            }
            let entry = acc.entry(&hit.node).or_insert(Acc { dense: Vec::new(), sparse: f64::NEG_INFINITY });
            match hit.source {
                HitSource::Dense => entry.dense.push(hit.score),
                HitSource::Sparse => entry.sparse = entry.sparse.max(hit.score),
            }
        }
    }

    let mut dense = Vec::new();
    let mut sparse = Vec::new();
    for (node, mut a) in acc {
        if a.dense.is_empty() {
            sparse.push(RerankEntry {
                node: node.clone(),
                frequency: 1,
                total_score: 0.0,
                sparse_only: true,
                sparse_score: a.sparse,
            });
        } else {
            a.dense.sort_by(f64::total_cmp);
            dense.push(RerankEntry {
                node: node.clone(),
                frequency: a.dense.len(),
                total_score: a.dense.iter().sum::<f64>() + 0.0,
                sparse_only: false,
                sparse_score: a.sparse,
            });
        }
    }

    match strategy {
        RerankStrategy::Frequency => dense.sort_by(|a, b| {
            b.frequency
                .cmp(&a.frequency)
                .then_with(|| b.total_score.total_cmp(&a.total_score))
                .then_with(|| a.node.cmp(&b.node))
        }),
        RerankStrategy::Score => {
            dense.sort_by(|a, b| b.total_score.total_cmp(&a.total_score).then_with(|| a.node.cmp(&b.node)))
        }
        RerankStrategy::Combined => {
            let f: Vec<f64> = dense.iter().map(|e| e.frequency as f64).collect();
            let s: Vec<f64> = dense.iter().map(|e| e.total_score).collect();
            let (fh, sh) = (min_max(&f), min_max(&s));
            let mut keyed: Vec<(f64, RerankEntry)> = dense
                .into_iter()
                .enumerate()
                .map(|(i, e)| (alpha * fh[i] + (1.0 - alpha) * sh[i], e))
                .collect();
            keyed.sort_by(|(ka, a), (kb, b)| kb.total_cmp(ka).then_with(|| a.node.cmp(&b.node)));
            dense = keyed.into_iter().map(|(_, e)| e).collect();
        }
    }
    sparse.sort_by(|a, b| b.sparse_score.total_cmp(&a.sparse_score).then_with(|| a.node.cmp(&b.node)));
    dense.extend(sparse);
    dense
}

/// Min-max normalization; a constant input maps to all ones.
fn min_max(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        values.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        vec![1.0; values.len()]
    }
}

/// Order-preserving dedup of any node-keyed list.
///
/// `ById` keeps the first occurrence of each node; `Tree` first discards
/// every item whose strict ancestor is also present (anywhere in the list),
/// then applies `ById`.
pub fn dedup_by<T>(items: Vec<T>, mode: DedupMode, key: impl Fn(&T) -> &NodeId) -> Vec<T> {
    if mode == DedupMode::None {
        return items;
    }
    let present: HashSet<NodeId> = items.iter().map(|t| key(t).clone()).collect();
    let subsumed = |id: &NodeId| {
        let mut cur = id.parent();
        while let Some(p) = cur {
            if present.contains(&p) {
                return true;
            }
            cur = p.parent();
        }
        false
    };
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|t| {
            let id = key(t);
            !(mode == DedupMode::Tree && subsumed(id)) && seen.insert(id.clone())
        })
        .collect()
}

pub fn dedup_nodes(snippets: Vec<ContextSnippet>, mode: DedupMode) -> Vec<ContextSnippet> {
    dedup_by(snippets, mode, |s| &s.node)
}

/// Turns ranked hits into snippets: section/document hits are dropped, and
/// every other hit is followed by its parent (sentence → paragraph,
/// paragraph → section).
pub fn expand_context(hits: &[RetrievalHit], index: &Index) -> Result<Vec<ContextSnippet>, RetrievalError> {
    let mut out = Vec::with_capacity(hits.len() * 2);
    for (rank, hit) in hits.iter().enumerate() {
        let row = index.node(&hit.node).ok_or_else(|| RetrievalError::UnknownNode(hit.node.clone()))?;
        if matches!(row.level, Level::Section | Level::Document) {
            continue;
        }
        out.push(ContextSnippet {
            node: row.id.clone(),
            text: row.content.clone(),
            score: hit.score,
            doc_id: row.id.doc_id().to_string(),
            is_image: row.is_image(),
            group: rank,
        });
        if let Some(parent_id) = &row.parent {
            let parent = index.node(parent_id).ok_or_else(|| RetrievalError::UnknownNode(parent_id.clone()))?;
            out.push(ContextSnippet {
                node: parent.id.clone(),
                text: parent.content.clone(),
                score: hit.score,
                doc_id: parent.id.doc_id().to_string(),
                is_image: parent.is_image(),
                group: rank,
            });
        }
    }
    Ok(out)
}

/// Shared, read-only resources a retrieval needs.
#[derive(Clone, Copy)]
pub struct RetrievalHandles<'a> {
    pub index: &'a Index,
    pub bm25: Option<&'a Bm25Index>,
    pub encoder: &'a dyn EncoderClient,
}

/// Plans queries for `question` and retrieves context for them.
pub fn retrieve(
    question: &str,
    cfg: &RetrieverConfig,
    handles: RetrievalHandles<'_>,
    planner: &dyn PlannerClient,
) -> Result<Vec<ContextSnippet>, RetrievalError> {
    let queries = plan_queries(question, cfg.n_queries, planner);
    retrieve_planned(question, &queries, cfg, handles)
}

/// Retrieval with an already planned query list (retries reuse the plan).
pub fn retrieve_planned(
    question: &str,
    queries: &[String],
    cfg: &RetrieverConfig,
    handles: RetrievalHandles<'_>,
) -> Result<Vec<ContextSnippet>, RetrievalError> {
    let filter = SearchFilter::retrieval_default();
    let lists: Vec<Vec<RetrievalHit>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let qvec = handles.encoder.embed_query(q)?;
            let mut hits = handles.index.search(&qvec, cfg.topk.max(1), &filter)?;
            hits.iter_mut().for_each(|h| h.query_index = i);
            Ok(hits)
        })
        .collect::<Result<_, RetrievalError>>()?;

    let entries = rerank(&lists, cfg.rerank, cfg.alpha);
    let candidates: Vec<RetrievalHit> = if cfg.dedup == DedupMode::None {
        // every raw hit survives, grouped by its node's reranked position
        let mut by_node: HashMap<&NodeId, Vec<&RetrievalHit>> = HashMap::new();
        for hit in lists.iter().flatten() {
            by_node.entry(&hit.node).or_default().push(hit);
        }
        entries
            .iter()
            .flat_map(|e| by_node.remove(&e.node).unwrap_or_default())
            .cloned()
            .collect()
    } else {
        let ranked = entries
            .iter()
            .map(|e| RetrievalHit {
                node: e.node.clone(),
                score: e.total_score,
                query_index: lists
                    .iter()
                    .position(|l| l.iter().any(|h| h.node == e.node))
                    .unwrap_or(0),
                source: HitSource::Dense,
            })
            .collect();
        dedup_by(ranked, cfg.dedup, |h| &h.node)
    };

    let mut candidates = match handles.bm25 {
        Some(bm25) if cfg.bm25_topk > 0 => {
            let sparse = bm25.search(question, cfg.bm25_topk + candidates.len());
            augment(candidates, &sparse, cfg.bm25_topk)
        }
        _ => candidates,
    };
    if let Some(k_final) = cfg.topk_final {
        candidates.truncate(k_final);
    }
    let snippets = expand_context(&candidates, handles.index)?;
    Ok(match cfg.dedup {
        DedupMode::None => snippets,
        _ => dedup_nodes(snippets, DedupMode::ById),
    })
}

/// Total characters across snippet texts.
pub fn context_chars(snippets: &[ContextSnippet]) -> usize {
    snippets.iter().map(|s| s.text.chars().count()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> NodeId {
        s.parse().unwrap()
    }

    fn hit(node: &str, score: f64, q: usize) -> RetrievalHit {
        RetrievalHit { node: id(node), score, query_index: q, source: HitSource::Dense }
    }

    fn snip(node: &str) -> ContextSnippet {
        ContextSnippet {
            node: id(node),
            text: node.to_string(),
            score: 0.0,
            doc_id: id(node).doc_id().to_string(),
            is_image: false,
            group: 0,
        }
    }

    fn nodes(entries: &[RerankEntry]) -> Vec<String> {
        entries.iter().map(|e| e.node.to_string()).collect()
    }

    fn ab_lists() -> Vec<Vec<RetrievalHit>> {
        vec![
            vec![hit("d:sec1:p1", 0.9, 0)],
            vec![hit("d:sec1:p1", 0.8, 1)],
            vec![hit("d:sec2:p1", 0.95, 2)],
        ]
    }

    #[test]
    fn frequency_and_score_strategies() {
        let lists = ab_lists();
        let freq = rerank(&lists, RerankStrategy::Frequency, 0.5);
        assert_eq!(nodes(&freq), vec!["d:sec1:p1", "d:sec2:p1"]);
        assert_eq!(freq[0].frequency, 2);
        assert!((freq[0].total_score - 1.7).abs() < 1e-12);
        assert_eq!(nodes(&rerank(&lists, RerankStrategy::Score, 0.5)), vec!["d:sec1:p1", "d:sec2:p1"]);
        assert_eq!(nodes(&rerank(&lists, RerankStrategy::Combined, 0.5)), vec!["d:sec1:p1", "d:sec2:p1"]);
    }

    #[test]
    fn combined_singleton_and_degenerate_ties() {
        let lists = vec![vec![hit("d:sec1:p1", 0.3, 0)]];
        for alpha in [0.0, 0.5, 1.0] {
            assert_eq!(nodes(&rerank(&lists, RerankStrategy::Combined, alpha)), vec!["d:sec1:p1"]);
        }
        // equal f and s everywhere → node id order
        let lists = vec![vec![hit("d:sec2:p1", 0.5, 0), hit("d:sec1:p1", 0.5, 0)]];
        assert_eq!(nodes(&rerank(&lists, RerankStrategy::Combined, 0.5)), vec!["d:sec1:p1", "d:sec2:p1"]);
    }

    #[test]
    fn sparse_only_entries_follow_dense() {
        let mut lists = ab_lists();
        lists.push(vec![RetrievalHit { node: id("d:sec3:p1"), score: 12.0, query_index: 0, source: HitSource::Sparse }]);
        for strategy in [RerankStrategy::Frequency, RerankStrategy::Score, RerankStrategy::Combined] {
            let out = rerank(&lists, strategy, 0.5);
            assert_eq!(out.last().unwrap().node, id("d:sec3:p1"));
            assert!(out.last().unwrap().sparse_only);
            assert_eq!(out.last().unwrap().frequency, 1);
        }
    }

    #[test]
    fn dedup_examples() {
        let out = dedup_nodes(vec![snip("d:sec1:p2"), snip("d:sec1:p2:s3")], DedupMode::Tree);
        assert_eq!(out, vec![snip("d:sec1:p2")]);
        let out = dedup_nodes(vec![snip("d:sec1:p2"), snip("d:sec1:p2")], DedupMode::ById);
        assert_eq!(out, vec![snip("d:sec1:p2")]);
        let out = dedup_nodes(vec![snip("d:sec1:p2:s3"), snip("d:sec1:p2")], DedupMode::Tree);
        assert_eq!(out, vec![snip("d:sec1:p2")]);
        // p21 is a sibling of p2, not a descendant
        let out = dedup_nodes(vec![snip("d:sec1:p2"), snip("d:sec1:p21")], DedupMode::Tree);
        assert_eq!(out.len(), 2);
        let raw = vec![snip("d:sec1:p2"), snip("d:sec1:p2")];
        assert_eq!(dedup_nodes(raw.clone(), DedupMode::None), raw);
    }

    #[test]
    fn dedup_mode_serde_names() {
        assert_eq!(serde_json::to_string(&DedupMode::ById).unwrap(), "\"id\"");
        assert_eq!(serde_json::from_str::<DedupMode>("\"tree\"").unwrap(), DedupMode::Tree);
        assert_eq!(serde_json::from_str::<DedupMode>("\"none\"").unwrap(), DedupMode::None);
    }
}
