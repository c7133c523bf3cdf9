use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DocTreeError, Level};

/// Hierarchical node identifier, rendered as `doc[:secI[:pJ[:sK]]]`.
///
/// The rendered string is the canonical form; ordering is lexicographic on it,
/// which is what every "ties by NodeId ascending" rule in the crate relies on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn document(doc_id: &str) -> Result<Self, DocTreeError> {
        validate_doc_label(doc_id)?;
        Ok(Self(doc_id.to_string()))
    }

    pub fn section(doc_id: &str, section: u32) -> Result<Self, DocTreeError> {
        Ok(Self::document(doc_id)?.child_segment("sec", section))
    }

    pub fn paragraph(doc_id: &str, section: u32, paragraph: u32) -> Result<Self, DocTreeError> {
        Ok(Self::section(doc_id, section)?.child_segment("p", paragraph))
    }

    pub fn sentence(
        doc_id: &str,
        section: u32,
        paragraph: u32,
        sentence: u32,
    ) -> Result<Self, DocTreeError> {
        Ok(Self::paragraph(doc_id, section, paragraph)?.child_segment("s", sentence))
    }

    /// Appends the next-level segment (`secI`, `pJ` or `sK`) to this id.
    pub fn child(&self, index: u32) -> Option<Self> {
        let prefix = match self.level() {
            Level::Document => "sec",
            Level::Section => "p",
            Level::Paragraph => "s",
            Level::Sentence => return None,
        };
        Some(self.child_segment(prefix, index))
    }

    fn child_segment(&self, prefix: &str, index: u32) -> Self {
        Self(format!("{}:{prefix}{index}", self.0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The root (document label) segment.
    pub fn doc_id(&self) -> &str {
        self.0.split(':').next().unwrap_or("")
    }

    /// Tree level implied by the number of segments.
    pub fn level(&self) -> Level {
        match self.0.matches(':').count() {
            0 => Level::Document,
            1 => Level::Section,
            2 => Level::Paragraph,
            _ => Level::Sentence,
        }
    }

    pub fn parent(&self) -> Option<Self> {
        self.0.rfind(':').map(|i| Self(self.0[..i].to_string()))
    }

    /// True iff `self` is a strict ancestor of `other`.
    ///
    /// The prefix must end on a segment boundary: `d:sec1:p2` is not an
    /// ancestor of `d:sec1:p21`.
    pub fn is_ancestor_of(&self, other: &NodeId) -> bool {
        is_ancestor(self, other)
    }
}

/// Segment-boundary-aware ancestor test on rendered ids.
pub fn is_ancestor(a: &NodeId, b: &NodeId) -> bool {
    let (a, b) = (a.as_str(), b.as_str());
    b.len() > a.len() + 1 && b.starts_with(a) && b.as_bytes()[a.len()] == b':'
}

fn validate_doc_label(label: &str) -> Result<(), DocTreeError> {
    if label.is_empty() || label.contains(':') || label.chars().any(char::is_whitespace) {
        return Err(DocTreeError::InvalidId(label.to_string()));
    }
    Ok(())
}

fn parse_segment(segment: &str, prefix: &str) -> bool {
    segment
        .strip_prefix(prefix)
        .is_some_and(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && digits.parse::<u32>().is_ok())
}

impl FromStr for NodeId {
    type Err = DocTreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let doc = parts.next().unwrap_or("");
        validate_doc_label(doc).map_err(|_| DocTreeError::InvalidId(s.to_string()))?;
        for prefix in ["sec", "p", "s"] {
            match parts.next() {
                None => return Ok(Self(s.to_string())),
                Some(seg) if parse_segment(seg, prefix) => {}
                Some(_) => return Err(DocTreeError::InvalidId(s.to_string())),
            }
        }
        if parts.next().is_some() {
            return Err(DocTreeError::InvalidId(s.to_string()));
        }
        Ok(Self(s.to_string()))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
