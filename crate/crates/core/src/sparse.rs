//! Okapi BM25 over paragraph-level nodes, used to append lexical matches
//! after dense results.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doctree::{DocumentTree, Level, NodeId};
use crate::retriever::{HitSource, RetrievalHit};

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

#[derive(Debug, Error)]
pub enum Bm25Error {
    #[error("no paragraph contains an indexable token")]
    EmptyCorpus,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub stopwords: BTreeSet<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { lowercase: true, stopwords: ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect() }
    }
}

impl TokenizerConfig {
    pub fn without_stopwords() -> Self {
        Self { lowercase: true, stopwords: BTreeSet::new() }
    }

    /// Reads one stopword per line; `#` starts a comment line.
    pub fn with_stopword_file(mut self, path: &Path) -> Result<Self, Bm25Error> {
        let text = std::fs::read_to_string(path)?;
        self.stopwords = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| if self.lowercase { l.to_lowercase() } else { l.to_string() })
            .collect();
        Ok(self)
    }

    /// Whitespace split, edge punctuation trimmed, optional lowercasing, then
    /// stopword removal. Inner punctuation survives (`1.5`, `gpt-3`).
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
            .filter(|t| !t.is_empty())
            .map(|t| if self.lowercase { t.to_lowercase() } else { t.to_string() })
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    /// Paragraph ids; postings refer to positions in this list.
    docs: Vec<NodeId>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avgdl: f64,
    k1: f64,
    b: f64,
    tokenizer: TokenizerConfig,
}

impl Bm25Index {
    pub fn build<'a>(
        paragraphs: impl IntoIterator<Item = (NodeId, &'a str)>,
        tokenizer: TokenizerConfig,
        k1: f64,
        b: f64,
    ) -> Result<Self, Bm25Error> {
        if !(k1 > 0.0 && k1.is_finite() && (0.0..=1.0).contains(&b)) {
            return Err(Bm25Error::InvalidParams { k1, b });
        }
        let mut docs = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (id, text) in paragraphs {
            let doc = docs.len() as u32;
            let tokens = tokenizer.tokenize(text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { doc, tf: count });
            }
            docs.push(id);
            doc_lengths.push(tokens.len() as u32);
        }
        if postings.is_empty() {
            return Err(Bm25Error::EmptyCorpus);
        }
        let avgdl = doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / docs.len() as f64;
        Ok(Self { docs, doc_lengths, postings, avgdl, k1, b, tokenizer })
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn doc_length(&self, id: &NodeId) -> Option<u32> {
        self.docs.iter().position(|d| d == id).map(|i| self.doc_lengths[i])
    }

    /// `(paragraph id, term frequency)` pairs for `term`.
    pub fn postings(&self, term: &str) -> Vec<(&NodeId, u32)> {
        self.postings
            .get(term)
            .map(|ps| ps.iter().map(|p| (&self.docs[p.doc as usize], p.tf)).collect())
            .unwrap_or_default()
    }

    /// Non-negative IDF: `ln((N − n_t + 0.5)/(n_t + 0.5) + 1)`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let nt = self.postings.get(term).map_or(0, Vec::len) as f64;
        ((n - nt + 0.5) / (nt + 0.5) + 1.0).ln()
    }

    /// Structural checks for decoded indexes.
    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.docs.len() != self.doc_lengths.len() || self.docs.is_empty() {
            return Err("bm25 document tables disagree".into());
        }
        if !(self.k1 > 0.0 && self.k1.is_finite() && (0.0..=1.0).contains(&self.b)) {
            return Err("bm25 parameters out of range".into());
        }
        if self.postings.values().flatten().any(|p| p.doc as usize >= self.docs.len() || p.tf == 0) {
            return Err("bm25 posting references unknown paragraph".into());
        }
        let mean = self.doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / self.docs.len() as f64;
        if mean != self.avgdl || mean <= 0.0 {
            return Err("bm25 avgdl does not match document lengths".into());
        }
        Ok(())
    }

    pub(crate) fn doc_ids(&self) -> &[NodeId] {
        &self.docs
    }

    /// Top-`k` paragraphs by Okapi BM25; zero-score paragraphs are omitted,
    /// ties break by node id.
    pub fn search(&self, query: &str, k: usize) -> Vec<RetrievalHit> {
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for term in self.tokenizer.tokenize(query) {
            let Some(postings) = self.postings.get(&term) else { continue };
            let idf = self.idf(&term);
            for p in postings {
                let tf = p.tf as f64;
                let dl = self.doc_lengths[p.doc as usize] as f64;
                let norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl);
                *scores.entry(p.doc).or_default() += idf * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        let mut hits: Vec<RetrievalHit> = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(doc, score)| RetrievalHit {
                node: self.docs[doc as usize].clone(),
                score,
                query_index: 0,
                source: HitSource::Sparse,
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.node.cmp(&b.node)));
        hits.truncate(k);
        hits
    }
}

/// Builds a BM25 index over every paragraph-level node of `trees`.
pub fn build_bm25(
    trees: &[DocumentTree],
    tokenizer: TokenizerConfig,
    k1: f64,
    b: f64,
) -> Result<Bm25Index, Bm25Error> {
    Bm25Index::build(
        trees
            .iter()
            .flat_map(|t| t.nodes_at(Level::Paragraph))
            .map(|n| (n.id.clone(), n.content.as_str())),
        tokenizer,
        k1,
        b,
    )
}

/// `bm25_search` as a free function.
pub fn bm25_search(index: &Bm25Index, query: &str, k: usize) -> Vec<RetrievalHit> {
    index.search(query, k)
}

/// Appends up to `k_bm25` sparse hits whose nodes are not already present.
/// Dense hits are returned unchanged and in order.
pub fn augment(dense: Vec<RetrievalHit>, sparse: &[RetrievalHit], k_bm25: usize) -> Vec<RetrievalHit> {
    let mut seen: HashSet<NodeId> = dense.iter().map(|h| h.node.clone()).collect();
    let mut out = dense;
    let extra: Vec<RetrievalHit> = sparse
        .iter()
        .filter(|h| seen.insert(h.node.clone()))
        .take(k_bm25)
        .cloned()
        .collect();
    out.extend(extra);
    out
}
