//! Rule-based plain-text segmentation: headings start sections, blank lines
//! separate paragraphs, and sentences end at `.`/`!`/`?` followed by
//! whitespace unless the terminator closes a known abbreviation.

use regex::Regex;
use serde_json::{Map, Value};

use super::{DocNode, DocTreeError, DocumentTree, Level, NodeId};

const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "Fig.", "et al.", "i.e.", "e.g.", "vs.", "Eq.", "Sec.", "Tab.", "Dr.", "Mr.", "Ms.", "No.",
];

const MARKDOWN_HEADING: &str = r"^#{1,6} ";

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}'];

#[derive(Debug, Clone)]
pub struct SegmentationRules {
    abbreviations: Vec<String>,
    heading_patterns: Vec<Regex>,
}

impl Default for SegmentationRules {
    fn default() -> Self {
        Self {
            abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
            heading_patterns: vec![Regex::new(MARKDOWN_HEADING).expect("static pattern")],
        }
    }
}

impl SegmentationRules {
    /// Adds an abbreviation. Matching is case-sensitive, so `No.` does not
    /// swallow the word "no." at a sentence end.
    pub fn with_abbreviation(mut self, abbr: &str) -> Self {
        let abbr = abbr.trim().to_string();
        if !abbr.is_empty() && !self.abbreviations.contains(&abbr) {
            self.abbreviations.push(abbr);
        }
        self
    }

    /// Adds a regex; any line it matches starts a new section.
    pub fn with_heading_pattern(mut self, pattern: &str) -> Result<Self, DocTreeError> {
        self.heading_patterns.push(Regex::new(pattern)?);
        Ok(self)
    }

    pub fn abbreviations(&self) -> &[String] {
        &self.abbreviations
    }

    fn heading_title<'a>(&self, line: &'a str) -> Option<&'a str> {
        let first = &self.heading_patterns[0];
        if first.is_match(line) {
            return Some(line.trim_start_matches('#').trim());
        }
        self.heading_patterns[1..]
            .iter()
            .any(|re| re.is_match(line))
            .then(|| line.trim())
    }

    fn ends_with_abbreviation(&self, before: &str) -> bool {
        self.abbreviations.iter().any(|abbr| {
            before.ends_with(abbr.as_str())
                && before[..before.len() - abbr.len()]
                    .chars()
                    .next_back()
                    .is_none_or(|c| !c.is_alphanumeric())
        })
    }
}

/// Splits one paragraph into trimmed sentences.
pub fn split_sentences(text: &str, rules: &SegmentationRules) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, next)) = chars.peek() {
            if matches!(next, '.' | '!' | '?') || CLOSERS.contains(&next) {
                end = j + next.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let at_boundary = chars.peek().is_none_or(|&(_, next)| next.is_whitespace());
        if !at_boundary {
            continue;
        }
        if c == '.' && end < text.len() && rules.ends_with_abbreviation(&text[start..end]) {
            continue;
        }
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            out.push(sentence.to_string());
        }
        start = end;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

struct PendingSection {
    index: u32,
    title: Option<String>,
    paragraphs: Vec<String>,
}

/// Segments raw text into a document tree rooted at `doc_id`.
///
/// Text before the first heading (or the whole text if there are no
/// headings) goes into the implicit section `sec0`; headings are numbered
/// from `sec1`. Sections that end up with no paragraphs are dropped.
pub fn parse_plaintext(
    doc_id: &str,
    text: &str,
    rules: &SegmentationRules,
) -> Result<DocumentTree, DocTreeError> {
    let root = NodeId::document(doc_id)?;

    let mut sections = vec![PendingSection { index: 0, title: None, paragraphs: Vec::new() }];
    let mut buffer: Vec<&str> = Vec::new();
    let flush = |buffer: &mut Vec<&str>, sections: &mut Vec<PendingSection>| {
        if !buffer.is_empty() {
            sections.last_mut().expect("never empty").paragraphs.push(buffer.join(" "));
            buffer.clear();
        }
    };
    let mut next_heading = 1;
    for line in text.lines() {
        if let Some(title) = rules.heading_title(line) {
            flush(&mut buffer, &mut sections);
            sections.push(PendingSection {
                index: next_heading,
                title: Some(title.to_string()),
                paragraphs: Vec::new(),
            });
            next_heading += 1;
        } else if line.trim().is_empty() {
            flush(&mut buffer, &mut sections);
        } else {
            buffer.push(line.trim());
        }
    }
    flush(&mut buffer, &mut sections);

    let mut nodes = vec![DocNode {
        id: root.clone(),
        level: Level::Document,
        content: String::new(),
        children: Vec::new(),
        parent: None,
        metadata: Map::new(),
    }];
    let mut section_texts = Vec::new();
    for section in sections.into_iter().filter(|s| !s.paragraphs.is_empty()) {
        let sec_id = NodeId::section(doc_id, section.index)?;
        let sec_pos = nodes.len();
        let mut metadata = Map::new();
        if let Some(title) = section.title {
            metadata.insert("title".into(), Value::String(title));
        }
        nodes.push(DocNode {
            id: sec_id.clone(),
            level: Level::Section,
            content: section.paragraphs.join("\n\n"),
            children: Vec::new(),
            parent: None,
            metadata,
        });
        for (pi, paragraph) in section.paragraphs.iter().enumerate() {
            let p_id = NodeId::paragraph(doc_id, section.index, pi as u32 + 1)?;
            nodes[sec_pos].children.push(p_id.clone());
            let p_pos = nodes.len();
            nodes.push(DocNode {
                id: p_id,
                level: Level::Paragraph,
                content: paragraph.clone(),
                children: Vec::new(),
                parent: None,
                metadata: Map::new(),
            });
            for (si, sentence) in split_sentences(paragraph, rules).into_iter().enumerate() {
                let s_id = NodeId::sentence(doc_id, section.index, pi as u32 + 1, si as u32 + 1)?;
                nodes[p_pos].children.push(s_id.clone());
                nodes.push(DocNode {
                    id: s_id,
                    level: Level::Sentence,
                    content: sentence,
                    children: Vec::new(),
                    parent: None,
                    metadata: Map::new(),
                });
            }
        }
        nodes[0].children.push(sec_id);
        section_texts.push(nodes[sec_pos].content.clone());
    }
    if !nodes.iter().any(|n| n.level == Level::Sentence) {
        return Err(DocTreeError::EmptyDocument);
    }
    nodes[0].content = section_texts.join("\n\n");
    DocumentTree::from_nodes(root, nodes)
}
