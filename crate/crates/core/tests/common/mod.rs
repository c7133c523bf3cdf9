//! Random fixture generators and brute-force reference implementations
//! shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use treerag_core::answerer::{AnswerRecord, AnswerValue};
use treerag_core::doctree::{DocNode, DocumentTree, Level, NodeId, ATTACHMENT_TYPE};
use treerag_core::embedder::{mock_encode, token_count};
use treerag_core::retriever::{ContextSnippet, HitSource, RetrievalHit};
use treerag_core::vectorstore::NodeRow;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn id(s: &str) -> NodeId {
    s.parse().unwrap()
}

const WORDS: &[&str] = &[
    "energy", "power", "carbon", "model", "training", "GPU", "watts", "cooling", "water", "the", "of", "data",
    "center", "PUE", "1.1", "552", "emissions", "grid", "inference", "hours",
];

pub fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn image_meta() -> Map<String, Value> {
    let mut m = Map::new();
    m.insert(ATTACHMENT_TYPE.into(), Value::String("image".into()));
    m
}

fn node(id: NodeId, level: Level, content: String, children: Vec<NodeId>, metadata: Map<String, Value>) -> DocNode {
    DocNode { id, level, content, children, parent: None, metadata }
}

/// A random four-level tree with at most `max_nodes` nodes. Internal nodes
/// hold the space-joined text of their children; some paragraphs are
/// captioned images.
pub fn random_tree(rng: &mut ChaCha8Rng, doc: &str, max_nodes: usize) -> DocumentTree {
    assert!(max_nodes >= 4);
    let root = NodeId::document(doc).unwrap();
    let mut nodes = Vec::new();
    let mut budget = max_nodes - 1;
    let mut section_ids = Vec::new();
    let mut section_texts = Vec::new();
    let n_sections = rng.random_range(1..=4);
    for s in 1..=n_sections {
        if budget < 3 {
            break;
        }
        budget -= 1;
        let sec = root.child(s).unwrap();
        let mut par_ids = Vec::new();
        let mut par_texts = Vec::new();
        let n_pars = rng.random_range(1..=4);
        for p in 1..=n_pars {
            if budget < 2 {
                break;
            }
            budget -= 1;
            let par = sec.child(p).unwrap();
            if rng.random_bool(0.15) {
                let caption = words(rng, 1, 8);
                nodes.push(node(par.clone(), Level::Paragraph, caption.clone(), vec![], image_meta()));
                par_ids.push(par);
                par_texts.push(caption);
                continue;
            }
            let n_sent = rng.random_range(1..=5).min(budget);
            let mut sent_ids = Vec::new();
            let mut sent_texts = Vec::new();
            for k in 1..=n_sent as u32 {
                budget -= 1;
                let sid = par.child(k).unwrap();
                let text = words(rng, 1, 9);
                nodes.push(node(sid.clone(), Level::Sentence, text.clone(), vec![], Map::new()));
                sent_ids.push(sid);
                sent_texts.push(text);
            }
            let text = sent_texts.join(" ");
            nodes.push(node(par.clone(), Level::Paragraph, text.clone(), sent_ids, Map::new()));
            par_ids.push(par);
            par_texts.push(text);
        }
        let text = par_texts.join(" ");
        nodes.push(node(sec.clone(), Level::Section, text.clone(), par_ids, Map::new()));
        section_ids.push(sec);
        section_texts.push(text);
    }
    nodes.push(node(root.clone(), Level::Document, section_texts.join(" "), section_ids, Map::new()));
    DocumentTree::from_nodes(root, nodes).unwrap()
}

/// Weighted mean of `mock_encode` over every leaf below (or at) `id`, with
/// whitespace token counts as weights.
pub fn oracle_embedding(tree: &DocumentTree, target: &NodeId, dim: usize, seed: u64) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut total = 0.0;
    for n in tree.nodes().filter(|n| n.children.is_empty()) {
        if n.id != *target && !target.is_ancestor_of(&n.id) {
            continue;
        }
        let w = n.content.split_whitespace().count() as f64;
        let v = mock_encode(&n.content, dim, seed);
        for (s, x) in sum.iter_mut().zip(v.as_slice()) {
            *s += w * x;
        }
        total += w;
    }
    sum.iter().map(|s| s / total).collect()
}

/// A random flat index: rows with consistent ids, levels and parents, and
/// small-integer vectors so exact ties and zero vectors occur.
pub fn random_rows(rng: &mut ChaCha8Rng, max_rows: usize, dim: usize) -> (Vec<NodeRow>, Vec<f32>) {
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<NodeRow>, id: NodeId, level: Level, parent: Option<NodeId>, image: bool| {
        rows.push(NodeRow {
            id,
            level,
            content: String::new(),
            parent,
            metadata: if image { image_meta() } else { Map::new() },
        });
    };
    'outer: for d in 0..rng.random_range(1..=6) {
        let doc = NodeId::document(&format!("doc{d}")).unwrap();
        push(&mut rows, doc.clone(), Level::Document, None, false);
        for s in 1..=rng.random_range(1..=6) {
            let sec = doc.child(s).unwrap();
            push(&mut rows, sec.clone(), Level::Section, Some(doc.clone()), false);
            for p in 1..=rng.random_range(1..=12) {
                let par = sec.child(p).unwrap();
                let image = rng.random_bool(0.1);
                push(&mut rows, par.clone(), Level::Paragraph, Some(sec.clone()), image);
                if !image {
                    for k in 1..=rng.random_range(1..=8) {
                        push(&mut rows, par.child(k).unwrap(), Level::Sentence, Some(par.clone()), false);
                    }
                }
                if rows.len() >= max_rows {
                    break 'outer;
                }
            }
        }
    }
    rows.truncate(max_rows.max(1));
    let mut vectors = Vec::with_capacity(rows.len() * dim);
    let mut previous: Vec<f32> = vec![0.0; dim];
    for _ in 0..rows.len() {
        let v: Vec<f32> = if rng.random_bool(0.1) {
            previous.clone()
        } else if rng.random_bool(0.03) {
            vec![0.0; dim]
        } else {
            (0..dim).map(|_| rng.random_range(-3i32..=3) as f32).collect()
        };
        vectors.extend_from_slice(&v);
        previous = v;
    }
    (rows, vectors)
}

/// Full-scan cosine ranking: every admitted row scored, sorted by score
/// descending then id string ascending.
pub fn oracle_search(
    rows: &[NodeRow],
    vectors: &[f32],
    dim: usize,
    query: &[f64],
    k: usize,
    levels: &[Level],
    include_images: bool,
) -> Vec<(String, f64)> {
    let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(String, f64)> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| levels.contains(&r.level))
        .filter(|(_, r)| include_images || r.metadata.get(ATTACHMENT_TYPE).and_then(Value::as_str) != Some("image"))
        .map(|(i, r)| {
            let v = &vectors[i * dim..(i + 1) * dim];
            let vn = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            let dot: f64 = v.iter().zip(query).map(|(&a, &b)| f64::from(a) * b).sum();
            let s = if qn * vn > 0.0 { dot / (qn * vn) } else { 0.0 };
            (r.id.as_str().to_string(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Reference Okapi BM25 with the Lucene-style non-negative IDF. Tokens are
/// whitespace-split, stripped of leading/trailing punctuation and lowercased;
/// `stopwords` are removed.
pub struct RefBm25 {
    docs: Vec<(String, Vec<String>)>,
    k1: f64,
    b: f64,
}

pub fn ref_tokens(text: &str, stopwords: &BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let chars: Vec<char> = raw.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let end = chars.iter().rposition(|c| c.is_alphanumeric());
        if let (Some(s), Some(e)) = (start, end) {
            let t: String = chars[s..=e].iter().collect::<String>().to_lowercase();
            if !stopwords.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}

impl RefBm25 {
    pub fn new(docs: &[(String, String)], stopwords: &BTreeSet<String>, k1: f64, b: f64) -> Self {
        Self { docs: docs.iter().map(|(id, t)| (id.clone(), ref_tokens(t, stopwords))).collect(), k1, b }
    }

    pub fn scores(&self, query: &str, stopwords: &BTreeSet<String>) -> Vec<(String, f64)> {
        let n = self.docs.len() as f64;
        let avgdl = self.docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
        let q = ref_tokens(query, stopwords);
        let mut out = Vec::new();
        for (id, toks) in &self.docs {
            let dl = toks.len() as f64;
            let mut s = 0.0;
            for term in &q {
                let tf = toks.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = self.docs.iter().filter(|(_, t)| t.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                s += idf * (tf * (self.k1 + 1.0)) / (tf + self.k1 * (1.0 - self.b + self.b * dl / avgdl));
            }
            if s > 0.0 {
                out.push((id.clone(), s));
            }
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        out
    }
}

/// Random per-query hit lists over a small node universe, without repeats
/// inside one list. Scores sit on a 1/64 grid so distinct sums stay
/// distinct after normalization.
pub fn random_hit_lists(rng: &mut ChaCha8Rng) -> Vec<Vec<RetrievalHit>> {
    let universe: Vec<NodeId> = (1..=rng.random_range(2..=5u32))
        .flat_map(|p| (1..=rng.random_range(1..=4u32)).map(move |s| id(&format!("d:sec1:p{p}:s{s}"))))
        .chain((1..=3).map(|p| id(&format!("e:sec2:p{p}"))))
        .collect();
    (0..rng.random_range(1..=5))
        .map(|q| {
            let mut pool = universe.clone();
            pool.shuffle(rng);
            pool.truncate(rng.random_range(0..=universe.len()));
            pool.into_iter()
                .map(|node| {
                    let source = if rng.random_bool(0.2) { HitSource::Sparse } else { HitSource::Dense };
                    RetrievalHit { node, score: rng.random_range(0..=64) as f64 / 64.0, query_index: q, source }
                })
                .collect()
        })
        .collect()
}

/// Random snippets drawn from one small tree's nodes, with duplicates and
/// ancestor/descendant pairs.
pub fn random_snippets(rng: &mut ChaCha8Rng) -> Vec<ContextSnippet> {
    let mut pool: Vec<NodeId> = Vec::new();
    for d in ["a", "b"] {
        let doc = NodeId::document(d).unwrap();
        for s in 1..=2 {
            let sec = doc.child(s).unwrap();
            pool.push(sec.clone());
            for p in 1..=3 {
                let par = sec.child(p).unwrap();
                pool.push(par.clone());
                for k in 1..=3 {
                    pool.push(par.child(k).unwrap());
                }
            }
        }
    }
    let mut text_of: HashMap<NodeId, String> = HashMap::new();
    (0..rng.random_range(0..=40))
        .enumerate()
        .map(|(rank, _)| {
            let node = pool.choose(rng).unwrap().clone();
            let depth = node.level() as usize;
            let text = text_of.entry(node.clone()).or_insert_with(|| "x".repeat(10 * (5 - depth))).clone();
            ContextSnippet {
                doc_id: node.doc_id().to_string(),
                node,
                text,
                score: 1.0,
                is_image: false,
                group: rank,
            }
        })
        .collect()
}

/// Random answer records over a few well-separated values (with unit and
/// formatting variants), categorical answers and blanks.
pub fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<AnswerRecord> {
    const REFS: &[&str] = &["d1", "d2", "d3"];
    (0..n)
        .map(|_| {
            let refs: Vec<&str> = REFS.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
            match rng.random_range(0..8) {
                0 | 1 => AnswerRecord::blank(),
                2 => AnswerRecord::answered("100", AnswerValue::Number(100.0), &refs),
                3 => AnswerRecord::answered("0.1 kW", AnswerValue::Text("0.1 kW".into()), &refs),
                4 => AnswerRecord::answered("2,500", AnswerValue::Text("2,500".into()), &refs),
                5 => AnswerRecord::answered("2500", AnswerValue::Number(2500.0), &refs),
                6 => AnswerRecord::answered("Yes", AnswerValue::Text("Yes".into()), &refs),
                _ => AnswerRecord::answered("no", AnswerValue::Text("no".into()), &refs),
            }
        })
        .collect()
}

pub fn leaf_weights_sum(tree: &DocumentTree, target: &NodeId) -> usize {
    tree.nodes()
        .filter(|n| n.children.is_empty() && (n.id == *target || target.is_ancestor_of(&n.id)))
        .map(|n| token_count(&n.content))
        .sum()
}
