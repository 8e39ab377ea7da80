//! TOWE release ingestion.
//!
//! Each non-header line is `s_id<TAB>sentence<TAB>target_tags<TAB>opinion_tags`,
//! where the tag columns are space-separated `word\TAG` items over the
//! whitespace tokens of the sentence. The opinion column may instead be a JSON
//! list of half-open `[start, end]` token intervals.

use std::path::Path;

use super::Span;
use crate::error::{Error, Result};
use crate::tagging::{decode_bio, Tag, TagSequence};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToweRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub target: Span,
    pub opinions: Vec<Span>,
}

fn parse_tag_column(col: &str, n: usize) -> std::result::Result<TagSequence, String> {
    let tags = col
        .split_whitespace()
        .map(|item| {
            let (_, tag) = item
                .rsplit_once('\\')
                .ok_or_else(|| format!("tag item {item:?} lacks a backslash"))?;
            tag.parse::<Tag>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if tags.len() != n {
        return Err(format!("{} tags for {} tokens", tags.len(), n));
    }
    Ok(TagSequence::new(tags))
}

fn parse_opinions(col: &str, n: usize) -> std::result::Result<Vec<Span>, String> {
    let col = col.trim();
    let spans: Vec<Span> = if col.starts_with('[') {
        serde_json::from_str(col).map_err(|e| e.to_string())?
    } else {
        decode_bio(&parse_tag_column(col, n)?).into_iter().collect()
    };
    if let Some(bad) = spans.iter().find(|s| s.end > n) {
        return Err(format!("opinion {bad} exceeds {n} tokens"));
    }
    Ok(spans)
}

pub fn parse_towe_tsv(path: &Path) -> Result<Vec<ToweRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err(format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        if i == 0 && cols[0] == "s_id" {
            continue;
        }
        let id = cols[0].trim().to_string();
        let tokens: Vec<String> = cols[1].split_whitespace().map(String::from).collect();
        if tokens.is_empty() {
            return Err(err(format!("sentence {id} is empty")));
        }
        let target_tags = parse_tag_column(cols[2], tokens.len()).map_err(|m| err(format!("{id}: {m}")))?;
        let targets: Vec<Span> = decode_bio(&target_tags).into_iter().collect();
        let target = match targets.as_slice() {
            [t] => *t,
            _ => return Err(err(format!("{id}: expected one target, found {}", targets.len()))),
        };
        let opinions = parse_opinions(cols[3], tokens.len()).map_err(|m| err(format!("{id}: {m}")))?;
        out.push(ToweRecord {
            id,
            tokens,
            target,
            opinions,
        });
    }
    Ok(out)
}
