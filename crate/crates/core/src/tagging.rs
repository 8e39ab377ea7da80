//! BIO tags and aspect-marked sentences.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{check_disjoint, Span};
use crate::error::Result;

pub const ASPECT_OPEN: &str = "#";
pub const ASPECT_CLOSE: &str = "$";

/// BIO label; the discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    B = 0,
    I = 1,
    O = 2,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::B, Tag::I, Tag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Self::ALL.get(i).copied()
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "B" | "b" => Ok(Tag::B),
            "I" | "i" => Ok(Tag::I),
            "O" | "o" => Ok(Tag::O),
            other => Err(format!("unknown BIO tag {other:?}")),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::B => "B",
            Tag::I => "I",
            Tag::O => "O",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn new(tags: Vec<Tag>) -> Self {
        TagSequence(tags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.index()).collect()
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for TagSequence {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(TagSequence)
    }
}

/// Tags the first token of every span `B`, the rest of it `I`, all else `O`.
pub fn encode_bio<'a>(spans: impl IntoIterator<Item = &'a Span>, len: usize) -> Result<TagSequence> {
    let spans: Vec<Span> = spans.into_iter().copied().collect();
    check_disjoint(&spans)?;
    let mut tags = vec![Tag::O; len];
    for s in &spans {
        s.check_bounds(len)?;
        tags[s.start] = Tag::B;
        for t in &mut tags[s.start + 1..s.end] {
            *t = Tag::I;
        }
    }
    Ok(TagSequence(tags))
}

/// Reads spans back out of a tag sequence. Total: an `I` that does not
/// continue a span opens a new one.
pub fn decode_bio(tags: &TagSequence) -> BTreeSet<Span> {
    let mut spans = BTreeSet::new();
    let mut open: Option<usize> = None;
    for (i, tag) in tags.0.iter().enumerate() {
        match tag {
            Tag::B => {
                if let Some(s) = open.replace(i) {
                    spans.insert(Span::new(s, i));
                }
            }
            Tag::I => {
                open.get_or_insert(i);
            }
            Tag::O => {
                if let Some(s) = open.take() {
                    spans.insert(Span::new(s, i));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.insert(Span::new(s, tags.len()));
    }
    spans
}

/// Sentence with `#` inserted before the aspect and `$` after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedSentence {
    pub tokens: Vec<String>,
    /// Aspect position in marked coordinates.
    pub aspect: Span,
    /// Aspect position in the original sentence.
    pub original_aspect: Span,
}

/// Inserts the aspect markers. Panics if `aspect` is out of bounds.
pub fn mark_aspect(tokens: &[String], aspect: Span) -> MarkedSentence {
    assert!(aspect.end <= tokens.len(), "aspect {aspect} beyond {} tokens", tokens.len());
    let mut marked = Vec::with_capacity(tokens.len() + 2);
    marked.extend_from_slice(&tokens[..aspect.start]);
    marked.push(ASPECT_OPEN.to_string());
    marked.extend_from_slice(&tokens[aspect.start..aspect.end]);
    marked.push(ASPECT_CLOSE.to_string());
    marked.extend_from_slice(&tokens[aspect.end..]);
    MarkedSentence {
        tokens: marked,
        aspect: Span::new(aspect.start + 1, aspect.end + 1),
        original_aspect: aspect,
    }
}

impl MarkedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn open_marker(&self) -> usize {
        self.aspect.start - 1
    }

    pub fn close_marker(&self) -> usize {
        self.aspect.end
    }

    pub fn is_marker(&self, pos: usize) -> bool {
        pos == self.open_marker() || pos == self.close_marker()
    }

    /// Original position of a marked position; `None` for the markers.
    pub fn to_original(&self, pos: usize) -> Option<usize> {
        let a = self.original_aspect;
        match pos {
            p if p < a.start => Some(p),
            p if p == a.start || p == a.end + 1 => None,
            p if p <= a.end => Some(p - 1),
            p => Some(p - 2),
        }
    }

    pub fn to_marked(&self, pos: usize) -> usize {
        let a = self.original_aspect;
        if pos < a.start {
            pos
        } else if pos < a.end {
            pos + 1
        } else {
            pos + 2
        }
    }

    /// Maps a marked-coordinate span back, clipping marker positions off.
    /// Returns `None` when only markers remain.
    pub fn project_span(&self, span: Span) -> Option<Span> {
        let mut covered = (span.start..span.end).filter_map(|p| self.to_original(p));
        let first = covered.next()?;
        let last = covered.last().unwrap_or(first);
        Some(Span::new(first, last + 1))
    }

    /// Gold tags over marked positions for original-coordinate spans. Marker
    /// positions are always `O`.
    pub fn encode_original<'a>(&self, spans: impl IntoIterator<Item = &'a Span>) -> Result<TagSequence> {
        let n = self.original_aspect_len_total();
        let spans: Vec<Span> = spans.into_iter().copied().collect();
        let orig = encode_bio(&spans, n)?;
        let mut tags = vec![Tag::O; self.len()];
        for (i, t) in orig.0.iter().enumerate() {
            tags[self.to_marked(i)] = *t;
        }
        Ok(TagSequence(tags))
    }

    fn original_aspect_len_total(&self) -> usize {
        self.tokens.len() - 2
    }

    /// Original tokens with the markers removed.
    pub fn unmark(&self) -> Vec<String> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_marker(*i))
            .map(|(_, t)| t.clone())
            .collect()
    }
}
