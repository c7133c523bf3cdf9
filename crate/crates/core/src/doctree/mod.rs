//! Four-level document trees (document → section → paragraph → sentence).
//!
//! Trees come from two places: the JSON interchange format (`.doctree.json`)
//! via [`DocumentTree::from_json`], and raw text via [`parse_plaintext`].
//! Both paths go through the same structural validation, so every
//! `DocumentTree` value satisfies:
//!
//! - exactly one document-level node, which is the root;
//! - every child id extends its parent id by exactly one segment, so levels
//!   never skip and ancestry can be decided from ids alone;
//! - sentence and image nodes are leaves;
//! - every non-root node is listed as a child by exactly one parent.

mod id;
mod segment;

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use id::{is_ancestor, NodeId};
pub use segment::{parse_plaintext, split_sentences, SegmentationRules};

#[derive(Debug, Error)]
pub enum DocTreeError {
    #[error("invalid node id {0:?}")]
    InvalidId(String),
    #[error("document contains no sentences")]
    EmptyDocument,
    #[error("schema error: {0}")]
    Schema(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("invalid heading pattern: {0}")]
    Pattern(#[from] regex::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Document,
    Section,
    Paragraph,
    Sentence,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Document, Level::Section, Level::Paragraph, Level::Sentence];

    pub fn finer(self) -> Option<Level> {
        match self {
            Level::Document => Some(Level::Section),
            Level::Section => Some(Level::Paragraph),
            Level::Paragraph => Some(Level::Sentence),
            Level::Sentence => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Document => "document",
            Level::Section => "section",
            Level::Paragraph => "paragraph",
            Level::Sentence => "sentence",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metadata key marking pre-captioned figure/table nodes.
pub const ATTACHMENT_TYPE: &str = "attachment_type";

#[derive(Debug, Clone, PartialEq)]
pub struct DocNode {
    pub id: NodeId,
    pub level: Level,
    pub content: String,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub metadata: Map<String, Value>,
}

impl DocNode {
    pub fn is_image(&self) -> bool {
        is_image_metadata(&self.metadata)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

pub(crate) fn is_image_metadata(metadata: &Map<String, Value>) -> bool {
    metadata.get(ATTACHMENT_TYPE).and_then(Value::as_str) == Some("image")
}

/// Wire form of one node in the interchange file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: String,
    level: Level,
    content: String,
    children: Vec<String>,
    metadata: Map<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    root: String,
    nodes: Vec<NodeRecord>,
}

/// An immutable, validated document tree. Node order is the order nodes were
/// supplied in (pre-order for parsed text), and is preserved on serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTree {
    root: NodeId,
    nodes: IndexMap<NodeId, DocNode>,
}

impl DocumentTree {
    /// Validates a node list and links parents. `nodes` need not carry
    /// `parent`; it is derived from the children lists.
    pub fn from_nodes(root: NodeId, nodes: Vec<DocNode>) -> Result<Self, DocTreeError> {
        let mut map: IndexMap<NodeId, DocNode> = IndexMap::with_capacity(nodes.len());
        for mut node in nodes {
            node.parent = None;
            if node.id.level() != node.level {
                return Err(DocTreeError::Structure(format!(
                    "node {} declares level {} but its id is {}-level",
                    node.id,
                    node.level,
                    node.id.level()
                )));
            }
            if map.contains_key(&node.id) {
                return Err(DocTreeError::Structure(format!("duplicate node id {}", node.id)));
            }
            map.insert(node.id.clone(), node);
        }

        match map.get(&root) {
            None => return Err(DocTreeError::Structure(format!("root {root} not among nodes"))),
            Some(n) if n.level != Level::Document => {
                return Err(DocTreeError::Structure(format!("root {root} is not document-level")))
            }
            Some(_) => {}
        }
        let documents = map.values().filter(|n| n.level == Level::Document).count();
        if documents != 1 {
            return Err(DocTreeError::Structure(format!(
                "expected exactly one document-level node, found {documents}"
            )));
        }

        let mut links: Vec<(NodeId, NodeId)> = Vec::new();
        for node in map.values() {
            if !node.children.is_empty() && (node.level == Level::Sentence || node.is_image()) {
                return Err(DocTreeError::Structure(format!(
                    "{} node {} must not have children",
                    if node.is_image() { "image" } else { "sentence" },
                    node.id
                )));
            }
            for child in &node.children {
                let Some(child_node) = map.get(child) else {
                    return Err(DocTreeError::Structure(format!(
                        "node {} lists unknown child {child}",
                        node.id
                    )));
                };
                if Some(child_node.level) != node.level.finer() {
                    return Err(DocTreeError::Structure(format!(
                        "level skip: {} ({}) has child {} ({})",
                        node.id, node.level, child, child_node.level
                    )));
                }
                if child.parent().as_ref() != Some(&node.id) {
                    return Err(DocTreeError::Structure(format!(
                        "child id {child} does not extend parent id {}",
                        node.id
                    )));
                }
                links.push((child.clone(), node.id.clone()));
            }
        }
        for (child, parent) in links {
            let slot = &mut map.get_mut(&child).expect("checked above").parent;
            if slot.is_some() {
                return Err(DocTreeError::Structure(format!("node {child} has more than one parent")));
            }
            *slot = Some(parent);
        }
        if let Some(orphan) = map.values().find(|n| n.id != root && n.parent.is_none()) {
            return Err(DocTreeError::Structure(format!("orphan node {}", orphan.id)));
        }

        Ok(Self { root, nodes: map })
    }

    pub fn from_json(text: &str) -> Result<Self, DocTreeError> {
        let file: TreeFile =
            serde_json::from_str(text).map_err(|e| DocTreeError::Schema(e.to_string()))?;
        let parse_id = |s: &str| s.parse::<NodeId>().map_err(|_| DocTreeError::Schema(format!("invalid node id {s:?}")));
        let root = parse_id(&file.root)?;
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for rec in file.nodes {
            nodes.push(DocNode {
                id: parse_id(&rec.id)?,
                level: rec.level,
                content: rec.content,
                children: rec.children.iter().map(|c| parse_id(c)).collect::<Result<_, _>>()?,
                parent: None,
                metadata: rec.metadata,
            });
        }
        Self::from_nodes(root, nodes)
    }

    pub fn to_json(&self) -> String {
        let file = TreeFile {
            root: self.root.to_string(),
            nodes: self
                .nodes
                .values()
                .map(|n| NodeRecord {
                    id: n.id.to_string(),
                    level: n.level,
                    content: n.content.clone(),
                    children: n.children.iter().map(ToString::to_string).collect(),
                    metadata: n.metadata.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("tree serialization cannot fail")
    }

    /// Sets a metadata key on the document node (e.g. the source file).
    pub fn with_root_metadata(mut self, key: &str, value: Value) -> Self {
        if let Some(root) = self.nodes.get_mut(&self.root) {
            root.metadata.insert(key.to_string(), value);
        }
        self
    }

    pub fn root(&self) -> &NodeId {
        &self.root
    }

    pub fn doc_id(&self) -> &str {
        self.root.doc_id()
    }

    pub fn get(&self, id: &NodeId) -> Option<&DocNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DocNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes_at(&self, level: Level) -> impl Iterator<Item = &DocNode> {
        self.nodes.values().filter(move |n| n.level == level)
    }

    /// Sentence texts in document order.
    pub fn sentences(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_sentences(&self.root, &mut out);
        out
    }

    fn collect_sentences<'a>(&'a self, id: &NodeId, out: &mut Vec<&'a str>) {
        let node = &self.nodes[id];
        if node.level == Level::Sentence {
            out.push(&node.content);
        }
        for child in &node.children {
            self.collect_sentences(child, out);
        }
    }

    /// Node counts indexed by `Level as usize`.
    pub fn level_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for n in self.nodes.values() {
            counts[n.level as usize] += 1;
        }
        counts
    }
}

/// Reads a `.doctree.json` file.
pub fn load_tree(path: &Path) -> Result<DocumentTree, DocTreeError> {
    DocumentTree::from_json(&std::fs::read_to_string(path)?)
}
