//! SemEval ABSA XML ingestion (2014 `aspectTerm` and 2015/2016 `Opinion` layouts).

use std::path::Path;

use super::Polarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemevalAspect {
    pub term: String,
    /// Character offsets into the sentence text, half-open.
    pub from: usize,
    pub to: usize,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemevalSentence {
    pub id: String,
    pub text: String,
    pub aspects: Vec<SemevalAspect>,
}

fn parse_err(path: &Path, node: roxmltree::Node, msg: impl Into<String>) -> Error {
    let pos = node.document().text_pos_at(node.range().start);
    Error::Parse {
        path: path.to_path_buf(),
        line: pos.row as usize,
        msg: msg.into(),
    }
}

fn attr<'a>(path: &Path, node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str> {
    node.attribute(name)
        .ok_or_else(|| parse_err(path, node, format!("<{}> lacks attribute {name:?}", node.tag_name().name())))
}

fn offset(path: &Path, node: roxmltree::Node, name: &str) -> Result<usize> {
    attr(path, node, name)?
        .trim()
        .parse()
        .map_err(|_| parse_err(path, node, format!("attribute {name:?} is not an offset")))
}

/// Parses a SemEval file, accepting both annotation layouts.
///
/// In the 2015/2016 layout an opinion target can repeat with different
/// categories; repeats of one character range are merged, and a range annotated
/// with disagreeing polarities becomes `conflict`. `NULL` targets are skipped.
pub fn parse_semeval_xml(path: &Path) -> Result<Vec<SemevalSentence>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = roxmltree::Document::parse(&raw).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.pos().row as usize,
        msg: e.to_string(),
    })?;

    let mut out = Vec::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        let id = attr(path, node, "id")?.to_string();
        let text = node
            .children()
            .find(|c| c.has_tag_name("text"))
            .and_then(|t| t.text())
            .ok_or_else(|| parse_err(path, node, format!("sentence {id} has no <text>")))?
            .to_string();
        let mut aspects: Vec<SemevalAspect> = Vec::new();
        for a in node
            .descendants()
            .filter(|n| n.has_tag_name("aspectTerm") || n.has_tag_name("Opinion"))
        {
            let term = if a.has_tag_name("Opinion") {
                attr(path, a, "target")?
            } else {
                attr(path, a, "term")?
            };
            if term == "NULL" {
                continue;
            }
            let from = offset(path, a, "from")?;
            let to = offset(path, a, "to")?;
            if from >= to || to > text.chars().count() {
                return Err(parse_err(
                    path,
                    a,
                    format!("sentence {id}: aspect {term:?} has bad offsets {from}..{to}"),
                ));
            }
            let polarity: Polarity = attr(path, a, "polarity")?
                .parse()
                .map_err(|e: String| parse_err(path, a, e))?;
            match aspects.iter_mut().find(|x| x.from == from && x.to == to) {
                Some(prev) if prev.polarity != polarity => prev.polarity = Polarity::Conflict,
                Some(_) => {}
                None => aspects.push(SemevalAspect {
                    term: term.to_string(),
                    from,
                    to,
                    polarity,
                }),
            }
        }
        aspects.sort_by_key(|a| (a.from, a.to));
        out.push(SemevalSentence { id, text, aspects });
    }
    Ok(out)
}
