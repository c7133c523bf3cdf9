//! Text encoders and bottom-up embedding propagation over document trees.
//!
//! Leaves (sentences and image captions) are embedded by an [`EncoderClient`];
//! every internal node gets the token-count-weighted mean of its children,
//! computed paragraph → section → document. Internal vectors are not
//! re-normalized.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::doctree::{DocumentTree, Level, NodeId};

const LEAF_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("internal node {0} has no child with positive weight")]
    ZeroWeightParent(NodeId),
    #[error("leaf node {0} has empty content")]
    EmptyLeaf(NodeId),
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector has non-finite entries")]
    NonFinite,
    #[error("encoder failure: {0}")]
    Client(String),
}

/// Fixed-length real vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; zero if either side has zero norm.
    pub fn cosine(&self, other: &Vector) -> f64 {
        cosine(&self.0, &other.0)
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbedding {
    pub node: NodeId,
    pub vector: Vector,
    /// Whitespace token count of the node's content.
    pub weight: usize,
}

pub type TreeEmbeddings = IndexMap<NodeId, NodeEmbedding>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedTask {
    Passage,
    Query,
}

impl EmbedTask {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbedTask::Passage => "passage",
            EmbedTask::Query => "query",
        }
    }
}

pub trait EncoderClient: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifier recorded in index headers, e.g. `mock:dim=64:seed=7`.
    fn id(&self) -> String;

    fn embed(&self, texts: &[&str], task: EmbedTask) -> Result<Vec<Vector>, EmbedError>;

    fn embed_passages(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError> {
        self.embed(texts, EmbedTask::Passage)
    }

    fn embed_query(&self, text: &str) -> Result<Vector, EmbedError> {
        self.embed(&[text], EmbedTask::Query)?
            .pop()
            .ok_or_else(|| EmbedError::Client("encoder returned no vector".into()))
    }
}

/// Whitespace token count.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn hash_tokens(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        tokens.push(String::new());
    }
    tokens.sort();
    tokens
}

/// Deterministic offline encoder: each lowercased alphanumeric token seeds a
/// pseudo-random direction, the directions are summed, and the result is
/// L2-normalized. Token order does not matter; shared tokens raise cosine.
pub fn mock_encode(text: &str, dim: usize, seed: u64) -> Vector {
    assert!(dim > 0, "dim must be positive");
    let mut acc = vec![0.0f64; dim];
    for token in hash_tokens(text) {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        for slot in acc.iter_mut() {
            *slot += rng.random_range(-1.0..1.0);
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    } else {
        acc[0] = 1.0;
    }
    Vector(acc)
}

#[derive(Debug, Clone)]
pub struct MockEncoder {
    dim: usize,
    seed: u64,
}

impl MockEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "dim must be positive");
        Self { dim, seed }
    }
}

impl EncoderClient for MockEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("mock:dim={}:seed={}", self.dim, self.seed)
    }

    fn embed(&self, texts: &[&str], _task: EmbedTask) -> Result<Vec<Vector>, EmbedError> {
        Ok(texts.iter().map(|t| mock_encode(t, self.dim, self.seed)).collect())
    }
}

/// Embeds every node of `tree`: leaves through `enc` (batched), internal
/// nodes as weighted means of their children.
pub fn embed_tree(tree: &DocumentTree, enc: &dyn EncoderClient) -> Result<TreeEmbeddings, EmbedError> {
    let leaves: Vec<_> = tree.nodes().filter(|n| n.is_leaf()).collect();
    if let Some(empty) = leaves.iter().find(|n| n.content.trim().is_empty()) {
        return Err(EmbedError::EmptyLeaf(empty.id.clone()));
    }
    let batches: Vec<Vec<Vector>> = leaves
        .par_chunks(LEAF_BATCH)
        .map(|chunk| {
            let texts: Vec<&str> = chunk.iter().map(|n| n.content.as_str()).collect();
            let vectors = enc.embed_passages(&texts)?;
            if vectors.len() != texts.len() {
                return Err(EmbedError::Client(format!(
                    "encoder returned {} vectors for {} texts",
                    vectors.len(),
                    texts.len()
                )));
            }
            for v in &vectors {
                if v.dim() != enc.dim() {
                    return Err(EmbedError::DimMismatch { expected: enc.dim(), got: v.dim() });
                }
            }
            Ok(vectors)
        })
        .collect::<Result<_, _>>()?;

    let mut computed: IndexMap<NodeId, NodeEmbedding> = IndexMap::with_capacity(tree.len());
    for (node, vector) in leaves.iter().zip(batches.into_iter().flatten()) {
        computed.insert(
            node.id.clone(),
            NodeEmbedding { node: node.id.clone(), vector, weight: token_count(&node.content) },
        );
    }

    for level in [Level::Paragraph, Level::Section, Level::Document] {
        for node in tree.nodes_at(level).filter(|n| !n.is_leaf()) {
            let mut sum = vec![0.0f64; enc.dim()];
            let mut total = 0usize;
            for child in &node.children {
                let emb = &computed[child];
                if emb.weight == 0 {
                    continue;
                }
                total += emb.weight;
                for (acc, v) in sum.iter_mut().zip(emb.vector.as_slice()) {
                    *acc += emb.weight as f64 * v;
                }
            }
            if total == 0 {
                return Err(EmbedError::ZeroWeightParent(node.id.clone()));
            }
            sum.iter_mut().for_each(|v| *v /= total as f64);
            computed.insert(
                node.id.clone(),
                NodeEmbedding { node: node.id.clone(), vector: Vector(sum), weight: token_count(&node.content) },
            );
        }
    }

    // Return in tree order.
    Ok(tree
        .nodes()
        .map(|n| {
            let emb = computed.swap_remove(&n.id).expect("every node embedded");
            (n.id.clone(), emb)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doctree::{parse_plaintext, DocNode, SegmentationRules};
    use serde_json::Map;

    /// Encoder returning scripted vectors keyed by text.
    struct FixedEncoder(Vec<(&'static str, Vec<f64>)>);

    impl EncoderClient for FixedEncoder {
        fn dim(&self) -> usize {
            2
        }
        fn id(&self) -> String {
            "fixed".into()
        }
        fn embed(&self, texts: &[&str], _task: EmbedTask) -> Result<Vec<Vector>, EmbedError> {
            Ok(texts
                .iter()
                .map(|t| Vector(self.0.iter().find(|(k, _)| k == t).unwrap().1.clone()))
                .collect())
        }
    }

    fn node(id: &str, level: Level, content: &str, children: &[&str]) -> DocNode {
        DocNode {
            id: id.parse().unwrap(),
            level,
            content: content.into(),
            children: children.iter().map(|c| c.parse().unwrap()).collect(),
            parent: None,
            metadata: Map::new(),
        }
    }

    fn two_sentence_tree(a: &str, b: &str) -> DocumentTree {
        let all = format!("{a} {b}");
        DocumentTree::from_nodes(
            "d".parse().unwrap(),
            vec![
                node("d", Level::Document, &all, &["d:sec1"]),
                node("d:sec1", Level::Section, &all, &["d:sec1:p1"]),
                node("d:sec1:p1", Level::Paragraph, &all, &["d:sec1:p1:s1", "d:sec1:p1:s2"]),
                node("d:sec1:p1:s1", Level::Sentence, a, &[]),
                node("d:sec1:p1:s2", Level::Sentence, b, &[]),
            ],
        )
        .unwrap()
    }

    fn vec_of(e: &TreeEmbeddings, id: &str) -> Vec<f64> {
        e[&id.parse::<NodeId>().unwrap()].vector.as_slice().to_vec()
    }

    #[test]
    fn symmetric_weights_average() {
        let tree = two_sentence_tree("a b", "c d");
        let enc = FixedEncoder(vec![("a b", vec![1.0, 0.0]), ("c d", vec![0.0, 1.0])]);
        let e = embed_tree(&tree, &enc).unwrap();
        assert_eq!(vec_of(&e, "d:sec1:p1"), vec![0.5, 0.5]);
        assert_eq!(e.len(), 5);
    }

    #[test]
    fn weighted_average_three_to_one() {
        let tree = two_sentence_tree("a b c", "d");
        let enc = FixedEncoder(vec![("a b c", vec![1.0, 0.0]), ("d", vec![0.0, 1.0])]);
        let e = embed_tree(&tree, &enc).unwrap();
        assert_eq!(vec_of(&e, "d:sec1:p1"), vec![0.75, 0.25]);
        // single-child chain above the paragraph is the identity
        assert_eq!(vec_of(&e, "d:sec1"), vec![0.75, 0.25]);
        assert_eq!(vec_of(&e, "d"), vec![0.75, 0.25]);
    }

    #[test]
    fn zero_weight_children_are_skipped_or_rejected() {
        // a punctuation-only sentence still has one whitespace token
        let tree = two_sentence_tree("a", ".");
        let enc = FixedEncoder(vec![("a", vec![1.0, 0.0]), (".", vec![0.0, 1.0])]);
        assert_eq!(vec_of(&embed_tree(&tree, &enc).unwrap(), "d:sec1:p1"), vec![0.5, 0.5]);

        // an image-free paragraph whose only child content is blank
        let tree = DocumentTree::from_nodes(
            "d".parse().unwrap(),
            vec![
                node("d", Level::Document, "x", &["d:sec1"]),
                node("d:sec1", Level::Section, "", &["d:sec1:p1"]),
                node("d:sec1:p1", Level::Paragraph, "", &["d:sec1:p1:s1"]),
                node("d:sec1:p1:s1", Level::Sentence, "x", &[]),
            ],
        )
        .unwrap();
        let enc = FixedEncoder(vec![("x", vec![1.0, 0.0])]);
        assert!(matches!(embed_tree(&tree, &enc), Err(EmbedError::ZeroWeightParent(id)) if id.as_str() == "d:sec1"));
    }

    #[test]
    fn empty_leaf_is_rejected() {
        let tree = two_sentence_tree("a", " ");
        let enc = MockEncoder::new(4, 0);
        assert!(matches!(embed_tree(&tree, &enc), Err(EmbedError::EmptyLeaf(_))));
    }

    #[test]
    fn token_count_examples() {
        assert_eq!(token_count("one two three"), 3);
        assert_eq!(token_count(""), 0);
        assert_eq!(token_count("  a   b "), 2);
    }

    #[test]
    fn mock_encoder_is_deterministic_and_unit_norm() {
        let a = mock_encode("a b", 16, 3);
        let b = mock_encode("a b", 16, 3);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
        assert_eq!(mock_encode("b a", 16, 3), a);
        assert_ne!(mock_encode("a b", 16, 4), a);
    }

    #[test]
    fn mock_encoder_overlap_raises_similarity() {
        let mut wins = 0;
        for seed in 0..100u64 {
            let q = mock_encode("power usage", 64, seed);
            let near = mock_encode("power usage effectiveness", 64, seed);
            let far = mock_encode("water consumption", 64, seed);
            if q.cosine(&near) > q.cosine(&far) {
                wins += 1;
            }
        }
        assert!(wins > 50, "only {wins}/100 seeds ranked the overlapping text higher");
    }

    #[test]
    fn parsed_tree_embeds_every_node() {
        let tree = parse_plaintext("d", "# T\nAlpha beta. Gamma.\n\nDelta epsilon zeta.", &SegmentationRules::default()).unwrap();
        let e = embed_tree(&tree, &MockEncoder::new(8, 1)).unwrap();
        assert_eq!(e.len(), tree.len());
        assert!(e.keys().zip(tree.nodes()).all(|(k, n)| *k == n.id));
    }
}
