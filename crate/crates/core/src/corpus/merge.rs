//! Conversion of single-opinion ASTE triplets into ASMOTE triplets.
//!
//! Baseline systems emit one `(aspect, sentiment, opinion)` triplet per
//! opinion. Triplets sharing an aspect span are combined into one triplet
//! carrying all of the opinions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AsmoteTriplet, SentenceTriplet, Sentiment, Span};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AsteTriplet {
    pub aspect: Span,
    pub sentiment: Sentiment,
    pub opinion: Span,
}

/// Majority vote; ties go to the more negative label.
fn resolve_sentiment(votes: &[usize; 3]) -> Sentiment {
    // label index doubles as the negativity rank
    Sentiment::ALL
        .into_iter()
        .max_by_key(|s| (votes[s.index()], s.index()))
        .expect("three labels")
}

/// Groups triplets by aspect span, unions their opinions and resolves the
/// sentiment by majority vote (ties: negative > neutral > positive).
///
/// Input is treated as a set: exact duplicates count once. Output is ordered
/// by aspect span.
pub fn merge_aste(triplets: &[AsteTriplet]) -> Vec<AsmoteTriplet> {
    let unique: BTreeSet<&AsteTriplet> = triplets.iter().collect();
    let mut groups: BTreeMap<Span, ([usize; 3], BTreeSet<Span>)> = BTreeMap::new();
    for t in unique {
        let entry = groups.entry(t.aspect).or_default();
        entry.0[t.sentiment.index()] += 1;
        entry.1.insert(t.opinion);
    }
    groups
        .into_iter()
        .map(|(aspect, (votes, opinions))| AsmoteTriplet {
            aspect,
            sentiment: resolve_sentiment(&votes),
            opinions,
        })
        .collect()
}

/// Merges triplets of many sentences; sentences keep first-appearance order.
pub fn merge_sentence_triplets(triplets: &[(String, AsteTriplet)]) -> Vec<SentenceTriplet> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_id: BTreeMap<&str, Vec<AsteTriplet>> = BTreeMap::new();
    for (id, t) in triplets {
        by_id
            .entry(id.as_str())
            .or_insert_with(|| {
                order.push(id.as_str());
                Vec::new()
            })
            .push(*t);
    }
    order
        .into_iter()
        .flat_map(|id| {
            merge_aste(&by_id[id]).into_iter().map(move |triplet| SentenceTriplet {
                id: id.to_string(),
                triplet,
            })
        })
        .collect()
}

fn index_span(indices: &[usize]) -> std::result::Result<Span, String> {
    let lo = indices.iter().min().ok_or("empty index list")?;
    let hi = indices.iter().max().ok_or("empty index list")?;
    Ok(Span::new(*lo, hi + 1))
}

/// Parses one `sentence####[([a..], [o..], 'NEG'), ...]` line, the layout used
/// by ASTE baselines. Index lists are inclusive token positions.
pub fn parse_aste_line(line: &str) -> std::result::Result<(Vec<String>, Vec<AsteTriplet>), String> {
    let (sentence, labels) = line
        .split_once("####")
        .ok_or_else(|| "missing #### separator".to_string())?;
    let tokens: Vec<String> = sentence.split_whitespace().map(String::from).collect();
    let as_json: String = labels
        .trim()
        .chars()
        .map(|c| match c {
            '(' => '[',
            ')' => ']',
            '\'' => '"',
            other => other,
        })
        .collect();
    let raw: Vec<(Vec<usize>, Vec<usize>, String)> =
        serde_json::from_str(&as_json).map_err(|e| format!("bad triplet list: {e}"))?;
    let mut out = Vec::with_capacity(raw.len());
    for (a, o, s) in raw {
        let t = AsteTriplet {
            aspect: index_span(&a)?,
            sentiment: s.parse()?,
            opinion: index_span(&o)?,
        };
        if t.aspect.end > tokens.len() || t.opinion.end > tokens.len() {
            return Err(format!("triplet indices exceed {} tokens", tokens.len()));
        }
        out.push(t);
    }
    Ok((tokens, out))
}

#[derive(Deserialize)]
struct AsteRecord {
    id: String,
    #[serde(flatten)]
    triplet: AsteTriplet,
}

/// Reads baseline output, either JSON lines
/// (`{"id":..,"aspect":[s,e],"sentiment":..,"opinion":[s,e]}`) or `####`
/// lines, whose sentence id is the 1-based line number.
pub fn read_aste_file(path: &Path) -> Result<Vec<(String, AsteTriplet)>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let rec: AsteRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            out.push((rec.id, rec.triplet));
        } else {
            let (_, triplets) = parse_aste_line(line).map_err(err)?;
            out.extend(triplets.into_iter().map(|t| ((i + 1).to_string(), t)));
        }
    }
    Ok(out)
}
