//! `.kindex` container.
//!
//! ```text
//! TREERAG-KINDEX
//! version=1
//! dim=<d>
//! tokenizer=whitespace
//! encoder=<id>
//! nodes=<n>
//! node_table_bytes=<a>
//! vector_table_bytes=<b>
//! sparse_bytes=<c>
//! sha256=<hex digest of everything after the blank line>
//!
//! <node table: one JSON object per line, n lines>
//! <vector table: per node, u32 LE id length, id bytes, d × f32 LE>
//! <sparse section: JSON, or empty>
//! ```
//!
//! Decoding never trusts a length before checking it against the bytes
//! actually present.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{Index, IndexError, NodeRow};
use crate::doctree::{Level, NodeId};
use crate::sparse::Bm25Index;

pub const MAGIC: &str = "TREERAG-KINDEX";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER_BYTES: usize = 64 * 1024;
const MAX_DIM: usize = 1 << 16;

const HEADER_KEYS: [&str; 9] = [
    "version",
    "dim",
    "tokenizer",
    "encoder",
    "nodes",
    "node_table_bytes",
    "vector_table_bytes",
    "sparse_bytes",
    "sha256",
];

fn err(msg: impl Into<String>) -> IndexError {
    IndexError::Format(msg.into())
}

pub fn encode(index: &Index) -> Vec<u8> {
    let mut nodes = Vec::new();
    for row in &index.rows {
        nodes.extend(serde_json::to_vec(row).expect("node rows serialize"));
        nodes.push(b'\n');
    }
    let dim = index.header.dim;
    let mut vectors = Vec::with_capacity(index.vectors.len() * 4 + index.rows.len() * 16);
    for (i, row) in index.rows.iter().enumerate() {
        let id = row.id.as_str().as_bytes();
        vectors.extend((id.len() as u32).to_le_bytes());
        vectors.extend(id);
        for x in &index.vectors[i * dim..(i + 1) * dim] {
            vectors.extend(x.to_le_bytes());
        }
    }
    let sparse = match &index.bm25 {
        Some(bm) => serde_json::to_vec(bm).expect("bm25 serializes"),
        None => Vec::new(),
    };

    let mut body = Vec::with_capacity(nodes.len() + vectors.len() + sparse.len());
    body.extend(&nodes);
    body.extend(&vectors);
    body.extend(&sparse);

    let h = &index.header;
    let mut out = format!(
        "{MAGIC}\nversion={}\ndim={}\ntokenizer={}\nencoder={}\nnodes={}\nnode_table_bytes={}\n\
         vector_table_bytes={}\nsparse_bytes={}\nsha256={}\n\n",
        h.version,
        h.dim,
        h.tokenizer,
        sanitize_header_value(&h.encoder),
        index.rows.len(),
        nodes.len(),
        vectors.len(),
        sparse.len(),
        hex::encode(Sha256::digest(&body)),
    )
    .into_bytes();
    out.extend(body);
    out
}

fn sanitize_header_value(v: &str) -> String {
    v.chars().map(|c| if c.is_control() { ' ' } else { c }).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| err("truncated vector table"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Index, IndexError> {
    let magic_len = MAGIC.len() + 1;
    if bytes.len() < magic_len || &bytes[..MAGIC.len()] != MAGIC.as_bytes() || bytes[MAGIC.len()] != b'\n' {
        return Err(err("missing magic line"));
    }
    let rest = &bytes[magic_len..];
    let header_end = rest
        .windows(2)
        .take(MAX_HEADER_BYTES)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| err("header not terminated"))?;
    let header_text = std::str::from_utf8(&rest[..header_end]).map_err(|_| err("header is not UTF-8"))?;
    let body = &rest[header_end + 2..];

    let mut fields: HashMap<&str, &str> = HashMap::new();
    for line in header_text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("bad header line {line:?}")))?;
        if !HEADER_KEYS.contains(&k) {
            return Err(err(format!("unknown header key {k:?}")));
        }
        if fields.insert(k, v).is_some() {
            return Err(err(format!("repeated header key {k:?}")));
        }
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| err(format!("missing header key {k:?}")));
    let num = |k: &str| -> Result<usize, IndexError> {
        let v = get(k)?;
        let canonical = v.bytes().all(|b| b.is_ascii_digit()) && (v == "0" || !v.starts_with('0'));
        v.parse::<usize>().ok().filter(|_| canonical).ok_or_else(|| err(format!("header {k} is not a count")))
    };

    let version = num("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(err(format!("unsupported version {version}")));
    }
    let dim = num("dim")?;
    if dim == 0 || dim > MAX_DIM {
        return Err(err(format!("dimension {dim} out of range")));
    }
    let tokenizer = get("tokenizer")?;
    if tokenizer != "whitespace" {
        return Err(err(format!("unknown tokenizer {tokenizer:?}")));
    }
    let encoder = get("encoder")?.to_string();
    if encoder.chars().any(char::is_control) {
        return Err(err("encoder id contains control characters"));
    }
    let n_nodes = num("nodes")?;
    let node_bytes = num("node_table_bytes")?;
    let vector_bytes = num("vector_table_bytes")?;
    let sparse_bytes = num("sparse_bytes")?;
    let total = node_bytes
        .checked_add(vector_bytes)
        .and_then(|t| t.checked_add(sparse_bytes))
        .ok_or_else(|| err("section sizes overflow"))?;
    if total != body.len() {
        return Err(err(format!("body is {} bytes, header declares {total}", body.len())));
    }
    let digest = hex::encode(Sha256::digest(body));
    if digest != get("sha256")? {
        return Err(err("checksum mismatch"));
    }
    // each node needs at least a 4-byte length and dim floats
    let min_row = dim.checked_mul(4).and_then(|b| b.checked_add(4)).ok_or_else(|| err("dimension overflow"))?;
    if n_nodes.checked_mul(min_row).is_none_or(|need| need > vector_bytes) {
        return Err(err("vector table too small for declared nodes"));
    }

    let node_table = std::str::from_utf8(&body[..node_bytes]).map_err(|_| err("node table is not UTF-8"))?;
    let lines: Vec<&str> = node_table.split_terminator('\n').collect();
    if lines.len() != n_nodes || (node_bytes > 0 && !node_table.ends_with('\n')) {
        return Err(err(format!("node table has {} rows, header declares {n_nodes}", lines.len())));
    }
    let rows = lines
        .iter()
        .enumerate()
        .map(|(i, line)| serde_json::from_str::<NodeRow>(line).map_err(|e| err(format!("node row {i}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    validate_rows(&rows)?;

    let mut reader = Reader { bytes: &body[node_bytes..node_bytes + vector_bytes], pos: 0 };
    let mut vectors = Vec::with_capacity(n_nodes * dim);
    for row in &rows {
        let id_len = reader.u32()? as usize;
        let id = reader.take(id_len)?;
        if id != row.id.as_str().as_bytes() {
            return Err(err(format!("vector row for {} is out of order", row.id)));
        }
        let floats = reader.take(dim * 4)?;
        for chunk in floats.chunks_exact(4) {
            let x = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !x.is_finite() {
                return Err(err(format!("non-finite vector value for {}", row.id)));
            }
            vectors.push(x);
        }
    }
    if reader.pos != vector_bytes {
        return Err(err("trailing bytes in vector table"));
    }

    let bm25 = if sparse_bytes == 0 {
        None
    } else {
        let bm: Bm25Index = serde_json::from_slice(&body[node_bytes + vector_bytes..])
            .map_err(|e| err(format!("sparse section: {e}")))?;
        bm.validate().map_err(err)?;
        let paragraphs: HashMap<&NodeId, Level> = rows.iter().map(|r| (&r.id, r.level)).collect();
        if let Some(bad) = bm.doc_ids().iter().find(|id| paragraphs.get(id) != Some(&Level::Paragraph)) {
            return Err(err(format!("sparse index names {bad}, which is not a paragraph row")));
        }
        Some(bm)
    };

    let mut index = Index::from_parts(&encoder, dim, rows, vectors, bm25)?;
    index.header.version = FORMAT_VERSION;
    Ok(index)
}

fn validate_rows(rows: &[NodeRow]) -> Result<(), IndexError> {
    let mut levels: HashMap<&NodeId, Level> = HashMap::with_capacity(rows.len());
    for row in rows {
        if levels.insert(&row.id, row.level).is_some() {
            return Err(IndexError::DuplicateNodeId(row.id.clone()));
        }
        if row.id.level() != row.level {
            return Err(err(format!("row {} claims level {}", row.id, row.level)));
        }
        if row.parent != row.id.parent() {
            return Err(err(format!("row {} has inconsistent parent", row.id)));
        }
    }
    for row in rows {
        if let Some(parent) = &row.parent {
            if !levels.contains_key(parent) {
                return Err(err(format!("row {} references missing parent {parent}", row.id)));
            }
        }
    }
    Ok(())
}
