//! Sentences, annotations and the ASMOTE datasets built from SemEval and TOWE releases.

mod build;
mod io;
mod merge;
mod semeval;
mod towe;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_dataset, partition_dev, tokenize_text, TokenAligner};
pub use io::{read_jsonl, read_split, read_triplets, write_jsonl, write_split, write_triplets};
pub use merge::{merge_aste, merge_sentence_triplets, parse_aste_line, read_aste_file, AsteTriplet};
pub use semeval::{parse_semeval_xml, SemevalAspect, SemevalSentence};
pub use towe::{parse_towe_tsv, ToweRecord};

/// Half-open token interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    /// Panics if `start >= end`.
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start < end, "span start {start} must be before end {end}");
        Span { start, end }
    }

    pub fn try_new(start: usize, end: usize) -> Option<Self> {
        (start < end).then_some(Span { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }

    pub fn check_bounds(&self, len: usize) -> Result<()> {
        if self.end > len {
            return Err(Error::SpanOutOfBounds { span: *self, len });
        }
        Ok(())
    }

    pub fn text<'a>(&self, tokens: &'a [String]) -> Vec<&'a str> {
        tokens[self.start..self.end].iter().map(String::as_str).collect()
    }
}

impl TryFrom<(usize, usize)> for Span {
    type Error = String;

    fn try_from((start, end): (usize, usize)) -> std::result::Result<Self, Self::Error> {
        Span::try_new(start, end).ok_or_else(|| format!("invalid span [{start}, {end})"))
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Three-way sentiment label; the discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive = 0,
    Neutral = 1,
    Negative = 2,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Neutral => "neutral",
            Sentiment::Negative => "negative",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(Sentiment::Positive),
            "neutral" | "neu" => Ok(Sentiment::Neutral),
            "negative" | "neg" => Ok(Sentiment::Negative),
            other => Err(format!("unknown sentiment {other:?}")),
        }
    }
}

/// Annotated polarity of an aspect: a sentiment or the `conflict` marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
    Conflict,
}

impl Polarity {
    pub fn sentiment(self) -> Option<Sentiment> {
        match self {
            Polarity::Positive => Some(Sentiment::Positive),
            Polarity::Neutral => Some(Sentiment::Neutral),
            Polarity::Negative => Some(Sentiment::Negative),
            Polarity::Conflict => None,
        }
    }

    pub fn is_conflict(self) -> bool {
        self == Polarity::Conflict
    }
}

impl From<Sentiment> for Polarity {
    fn from(s: Sentiment) -> Self {
        match s {
            Sentiment::Positive => Polarity::Positive,
            Sentiment::Neutral => Polarity::Neutral,
            Sentiment::Negative => Polarity::Negative,
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("conflict") {
            Ok(Polarity::Conflict)
        } else {
            s.parse::<Sentiment>().map(Polarity::from)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectAnnotation {
    pub span: Span,
    pub polarity: Polarity,
    #[serde(default)]
    pub opinions: BTreeSet<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub aspects: Vec<AspectAnnotation>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks token, bound and overlap invariants.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::data(&self.id, "sentence has no tokens"));
        }
        let n = self.tokens.len();
        let wrap = |e: Error| Error::data(&self.id, e.to_string());
        let aspect_spans: Vec<Span> = self.aspects.iter().map(|a| a.span).collect();
        check_disjoint(&aspect_spans).map_err(wrap)?;
        for a in &self.aspects {
            a.span.check_bounds(n).map_err(wrap)?;
            let ops: Vec<Span> = a.opinions.iter().copied().collect();
            check_disjoint(&ops).map_err(wrap)?;
            for o in &ops {
                o.check_bounds(n).map_err(wrap)?;
            }
        }
        Ok(())
    }

    pub fn aspect_spans(&self) -> Vec<Span> {
        self.aspects.iter().map(|a| a.span).collect()
    }
}

/// Errors when any two spans overlap.
pub fn check_disjoint(spans: &[Span]) -> Result<()> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0].overlaps(&w[1]) {
            return Err(Error::Overlap {
                first: w[0],
                second: w[1],
            });
        }
    }
    Ok(())
}

/// Aspect + sentiment + every opinion for that aspect.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AsmoteTriplet {
    pub aspect: Span,
    pub sentiment: Sentiment,
    pub opinions: BTreeSet<Span>,
}

impl AsmoteTriplet {
    pub fn new(aspect: Span, sentiment: Sentiment, opinions: impl IntoIterator<Item = Span>) -> Self {
        AsmoteTriplet {
            aspect,
            sentiment,
            opinions: opinions.into_iter().collect(),
        }
    }
}

/// Triplet tagged with the id of the sentence it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceTriplet {
    pub id: String,
    #[serde(flatten)]
    pub triplet: AsmoteTriplet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub sentences: Vec<Sentence>,
}

impl DatasetSplit {
    /// Validates every sentence and the uniqueness of sentence ids.
    pub fn new(name: SplitName, sentences: Vec<Sentence>) -> Result<Self> {
        let split = DatasetSplit { name, sentences };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::data(&s.id, "duplicate sentence id in split"));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Drops every conflict-polarity aspect; sentences are kept.
pub fn remove_conflict(split: &DatasetSplit) -> DatasetSplit {
    let sentences = split
        .sentences
        .iter()
        .map(|s| Sentence {
            aspects: s
                .aspects
                .iter()
                .filter(|a| !a.polarity.is_conflict())
                .cloned()
                .collect(),
            ..s.clone()
        })
        .collect();
    DatasetSplit {
        name: split.name,
        sentences,
    }
}

/// One triplet per non-conflict aspect that has at least one opinion.
pub fn gold_triplets(split: &DatasetSplit) -> Vec<SentenceTriplet> {
    split
        .sentences
        .iter()
        .flat_map(|s| {
            s.aspects.iter().filter_map(move |a| {
                let sentiment = a.polarity.sentiment()?;
                if a.opinions.is_empty() {
                    return None;
                }
                Some(SentenceTriplet {
                    id: s.id.clone(),
                    triplet: AsmoteTriplet {
                        aspect: a.span,
                        sentiment,
                        opinions: a.opinions.clone(),
                    },
                })
            })
        })
        .collect()
}

/// Row of the dataset statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub sentences: usize,
    pub aspects: usize,
    pub triplets: usize,
    pub conflict_triplets: usize,
}

impl SplitStats {
    pub fn as_tuple(&self) -> (usize, usize, usize, usize) {
        (self.sentences, self.aspects, self.triplets, self.conflict_triplets)
    }
}

/// Counts sentences, aspects (conflict included), triplets and conflict triplets.
///
/// Expects the split as built, before conflict removal. A conflict triplet is a
/// conflict-polarity aspect that has at least one opinion.
pub fn split_stats(split: &DatasetSplit) -> SplitStats {
    let mut stats = SplitStats {
        sentences: split.sentences.len(),
        ..SplitStats::default()
    };
    for a in split.sentences.iter().flat_map(|s| &s.aspects) {
        stats.aspects += 1;
        if a.opinions.is_empty() {
            continue;
        }
        if a.polarity.is_conflict() {
            stats.conflict_triplets += 1;
        } else {
            stats.triplets += 1;
        }
    }
    stats
}
