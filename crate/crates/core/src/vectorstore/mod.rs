//! Single-file node + vector store with exact, level-filtered cosine search.

mod format;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::doctree::{is_image_metadata, DocumentTree, Level, NodeId};
use crate::embedder::{TreeEmbeddings, Vector};
use crate::retriever::{HitSource, RetrievalHit};
use crate::sparse::Bm25Index;

pub use format::{decode, encode, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    #[error("node {0} has no embedding")]
    MissingEmbedding(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("search filter must name at least one level")]
    EmptyFilter,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("malformed index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRow {
    pub id: NodeId,
    pub level: Level,
    pub content: String,
    pub parent: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub metadata: Map<String, Value>,
}

impl NodeRow {
    pub fn is_image(&self) -> bool {
        is_image_metadata(&self.metadata)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchFilter {
    levels: Vec<Level>,
    pub include_images: bool,
}

impl SearchFilter {
    pub fn new(levels: &[Level], include_images: bool) -> Result<Self, IndexError> {
        if levels.is_empty() {
            return Err(IndexError::EmptyFilter);
        }
        Ok(Self { levels: levels.to_vec(), include_images })
    }

    /// Sentences and paragraphs, figures included.
    pub fn retrieval_default() -> Self {
        Self { levels: vec![Level::Sentence, Level::Paragraph], include_images: true }
    }

    pub fn all_levels() -> Self {
        Self { levels: Level::ALL.to_vec(), include_images: true }
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn admits(&self, row: &NodeRow) -> bool {
        self.levels.contains(&row.level) && (self.include_images || !row.is_image())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexHeader {
    pub version: u32,
    pub dim: usize,
    pub tokenizer: String,
    pub encoder: String,
}

/// In-memory index. Vectors are held as little-endian-exact f32, the same
/// values that go to disk, so a reopened index searches identically.
#[derive(Debug, Clone)]
pub struct Index {
    header: IndexHeader,
    rows: Vec<NodeRow>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    by_id: HashMap<NodeId, usize>,
    bm25: Option<Bm25Index>,
}

impl PartialEq for Index {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header
            && self.rows == other.rows
            && self.vectors.iter().map(|v| v.to_bits()).eq(other.vectors.iter().map(|v| v.to_bits()))
            && self.bm25 == other.bm25
    }
}

impl Index {
    /// Assembles an index from rows and aligned vectors.
    pub fn from_parts(
        encoder: &str,
        dim: usize,
        rows: Vec<NodeRow>,
        vectors: Vec<f32>,
        bm25: Option<Bm25Index>,
    ) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::Format("dimension must be positive".into()));
        }
        if vectors.len() != rows.len() * dim {
            return Err(IndexError::Format(format!(
                "{} vector values for {} rows of dimension {dim}",
                vectors.len(),
                rows.len()
            )));
        }
        let mut by_id = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if by_id.insert(row.id.clone(), i).is_some() {
                return Err(IndexError::DuplicateNodeId(row.id.clone()));
            }
        }
        let norms = vectors
            .chunks_exact(dim)
            .map(|v| v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            header: IndexHeader {
                version: FORMAT_VERSION,
                dim,
                tokenizer: "whitespace".into(),
                encoder: encoder.to_string(),
            },
            rows,
            vectors,
            norms,
            by_id,
            bm25,
        })
    }

    /// Builds from trees and their embeddings. Every node needs a vector of
    /// a single shared dimension; ids must be unique across trees.
    pub fn build(
        trees: &[DocumentTree],
        embeddings: &[TreeEmbeddings],
        encoder: &str,
        bm25: Option<Bm25Index>,
    ) -> Result<Self, IndexError> {
        if trees.len() != embeddings.len() {
            return Err(IndexError::Format(format!(
                "{} trees but {} embedding maps",
                trees.len(),
                embeddings.len()
            )));
        }
        let mut dim = None;
        let mut rows = Vec::new();
        let mut vectors = Vec::new();
        for (tree, embs) in trees.iter().zip(embeddings) {
            for node in tree.nodes() {
                let emb = embs.get(&node.id).ok_or_else(|| IndexError::MissingEmbedding(node.id.clone()))?;
                let d = *dim.get_or_insert(emb.vector.dim());
                if emb.vector.dim() != d {
                    return Err(IndexError::DimMismatch { expected: d, got: emb.vector.dim() });
                }
                rows.push(NodeRow {
                    id: node.id.clone(),
                    level: node.level,
                    content: node.content.clone(),
                    parent: node.parent.clone(),
                    metadata: node.metadata.clone(),
                });
                vectors.extend(emb.vector.as_slice().iter().map(|&x| x as f32));
            }
        }
        let dim = dim.ok_or_else(|| IndexError::Format("no nodes to index".into()))?;
        Self::from_parts(encoder, dim, rows, vectors, bm25)
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[NodeRow] {
        &self.rows
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeRow> {
        self.by_id.get(id).map(|&i| &self.rows[i])
    }

    /// Stored vector of a node, widened to f64.
    pub fn vector(&self, id: &NodeId) -> Option<Vec<f64>> {
        self.by_id.get(id).map(|&i| self.row_vector(i).iter().map(|&x| f64::from(x)).collect())
    }

    pub fn bm25(&self) -> Option<&Bm25Index> {
        self.bm25.as_ref()
    }

    fn row_vector(&self, i: usize) -> &[f32] {
        let d = self.header.dim;
        &self.vectors[i * d..(i + 1) * d]
    }

    /// Exact top-k by cosine similarity, ties by node id ascending.
    pub fn search(&self, query: &Vector, k: usize, filter: &SearchFilter) -> Result<Vec<RetrievalHit>, IndexError> {
        if query.dim() != self.header.dim {
            return Err(IndexError::DimMismatch { expected: self.header.dim, got: query.dim() });
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let q = query.as_slice();
        let qnorm = query.norm();
        let mut scored: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(_, row)| filter.admits(row))
            .map(|(i, _)| {
                let denom = qnorm * self.norms[i];
                let score = if denom > 0.0 {
                    let dot: f64 = self.row_vector(i).iter().zip(q).map(|(&a, &b)| f64::from(a) * b).sum();
                    // -0.0 becomes 0.0
                    dot / denom + 0.0
                } else {
                    0.0
                };
                (score, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| self.rows[a.1].id.cmp(&self.rows[b.1].id)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(score, i)| RetrievalHit {
                node: self.rows[i].id.clone(),
                score,
                query_index: 0,
                source: HitSource::Dense,
            })
            .collect())
    }

    /// Writes atomically: a sibling temp file is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        write_atomic(path, &encode(self))?;
        Ok(())
    }

    pub fn open(path: &Path) -> Result<Self, IndexError> {
        decode(&std::fs::read(path)?)
    }

    pub fn info(&self) -> IndexInfo {
        let mut level_counts = [0usize; 4];
        let mut images = 0;
        for row in &self.rows {
            level_counts[row.level as usize] += 1;
            images += usize::from(row.is_image());
        }
        let mut documents: Vec<String> =
            self.rows.iter().filter(|r| r.level == Level::Document).map(|r| r.id.to_string()).collect();
        documents.sort();
        IndexInfo {
            header: self.header.clone(),
            nodes: self.rows.len(),
            level_counts,
            images,
            documents,
            bm25_paragraphs: self.bm25.as_ref().map(Bm25Index::n_docs),
        }
    }
}

/// Builds an index and persists it at `path`.
pub fn build_index(
    trees: &[DocumentTree],
    embeddings: &[TreeEmbeddings],
    encoder: &str,
    bm25: Option<Bm25Index>,
    path: &Path,
) -> Result<Index, IndexError> {
    let index = Index::build(trees, embeddings, encoder, bm25)?;
    index.save(path)?;
    Ok(index)
}

pub fn search(index: &Index, query: &Vector, k: usize, filter: &SearchFilter) -> Result<Vec<RetrievalHit>, IndexError> {
    index.search(query, k, filter)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexInfo {
    pub header: IndexHeader,
    pub nodes: usize,
    /// Indexed by [`Level`] discriminant: document, section, paragraph, sentence.
    pub level_counts: [usize; 4],
    pub images: usize,
    pub documents: Vec<String>,
    pub bm25_paragraphs: Option<usize>,
}

impl fmt::Display for IndexInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "version\t{}", self.header.version)?;
        writeln!(f, "dim\t{}", self.header.dim)?;
        writeln!(f, "tokenizer\t{}", self.header.tokenizer)?;
        writeln!(f, "encoder\t{}", self.header.encoder)?;
        writeln!(f, "nodes\t{}", self.nodes)?;
        for level in Level::ALL {
            writeln!(f, "{level}\t{}", self.level_counts[level as usize])?;
        }
        writeln!(f, "images\t{}", self.images)?;
        match self.bm25_paragraphs {
            Some(n) => writeln!(f, "bm25\t{n} paragraphs")?,
            None => writeln!(f, "bm25\tnone")?,
        }
        write!(f, "documents\t{}", self.documents.join(","))
    }
}
