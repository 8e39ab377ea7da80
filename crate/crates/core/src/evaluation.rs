//! Exact-match triplet scoring, subtask metrics and attention export.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentiment, SentenceTriplet, Span};
use crate::error::{Error, Result};
use crate::model::StageTwoModel;
use crate::scalar::Scalar;
use crate::tagging::mark_aspect;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl MetricReport {
    pub fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricReport {
            precision,
            recall,
            f1,
            gold,
            predicted,
            matched,
        }
    }
}

fn unique<'a>(items: &'a [SentenceTriplet], side: &'static str) -> Result<HashSet<&'a SentenceTriplet>> {
    let mut seen = HashSet::with_capacity(items.len());
    for t in items {
        if !seen.insert(t) {
            return Err(Error::DuplicateTriplet { id: t.id.clone(), side });
        }
    }
    Ok(seen)
}

/// Precision, recall and F1 where a prediction counts only if sentence id,
/// aspect span, sentiment and the complete opinion set all equal a gold
/// triplet. Predictions without opinions are dropped first.
pub fn triplet_prf(gold: &[SentenceTriplet], pred: &[SentenceTriplet]) -> Result<MetricReport> {
    let pred: Vec<SentenceTriplet> = pred
        .iter()
        .filter(|t| !t.triplet.opinions.is_empty())
        .cloned()
        .collect();
    let g = unique(gold, "gold")?;
    let p = unique(&pred, "predicted")?;
    let matched = p.iter().filter(|t| g.contains(*t)).count();
    Ok(MetricReport::from_counts(g.len(), p.len(), matched))
}

/// Sentiment keyed by sentence id and aspect span.
pub type AspectKey = (String, Span);

/// Fraction of gold aspects whose predicted sentiment is correct. A gold
/// aspect without a prediction counts as wrong.
pub fn atsa_accuracy(gold: &BTreeMap<AspectKey, Sentiment>, pred: &BTreeMap<AspectKey, Sentiment>) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let mut missing = 0;
    let correct = gold
        .iter()
        .filter(|(k, s)| match pred.get(*k) {
            Some(p) => p == *s,
            None => {
                missing += 1;
                false
            }
        })
        .count();
    if missing > 0 {
        log::warn!("{missing} gold aspects have no sentiment prediction; counted as wrong");
    }
    correct as f64 / gold.len() as f64
}

/// Opinion spans pooled over all aspects; exact span match.
pub fn towe_f1(gold: &BTreeMap<AspectKey, BTreeSet<Span>>, pred: &BTreeMap<AspectKey, BTreeSet<Span>>) -> MetricReport {
    let empty = BTreeSet::new();
    let (mut g, mut p, mut m) = (0, 0, 0);
    for (k, gs) in gold {
        let ps = pred.get(k).unwrap_or(&empty);
        g += gs.len();
        p += ps.len();
        m += gs.intersection(ps).count();
    }
    MetricReport::from_counts(g, p, m)
}

/// Aspect spans per sentence, exact match.
pub fn span_f1(gold: &BTreeMap<String, BTreeSet<Span>>, pred: &BTreeMap<String, BTreeSet<Span>>) -> MetricReport {
    let empty = BTreeSet::new();
    let g = gold.values().map(BTreeSet::len).sum();
    let p = pred.values().map(BTreeSet::len).sum();
    let m = gold
        .iter()
        .map(|(id, gs)| gs.intersection(pred.get(id).unwrap_or(&empty)).count())
        .sum();
    MetricReport::from_counts(g, p, m)
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub dataset: String,
    pub triplet: MetricReport,
    pub atsa_accuracy: f64,
    pub towe: MetricReport,
}

/// Methods as rows, datasets as columns; values in percent.
pub fn format_triplet_table(rows: &[ResultRow]) -> String {
    format_grid(rows, &[("P", |r| r.triplet.precision), ("R", |r| r.triplet.recall), ("F1", |r| r.triplet.f1)])
}

/// ASMOTE F1, ATSA accuracy and TOWE F1 per dataset.
pub fn format_subtask_table(rows: &[ResultRow]) -> String {
    format_grid(rows, &[("ASMOTE", |r| r.triplet.f1), ("ATSA", |r| r.atsa_accuracy), ("TOWE", |r| r.towe.f1)])
}

type Column = (&'static str, fn(&ResultRow) -> f64);

fn format_grid(rows: &[ResultRow], cols: &[Column]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:width$}", "Method");
    for d in &datasets {
        for (c, _) in cols {
            let _ = write!(out, " {:>8}", format!("{d}/{c}"));
        }
    }
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "{m:width$}");
        for d in &datasets {
            let row = rows.iter().find(|r| r.method == *m && r.dataset == *d);
            for (_, get) in cols {
                match row {
                    Some(r) => {
                        let _ = write!(out, " {:>8.1}", 100.0 * get(r));
                    }
                    None => {
                        let _ = write!(out, " {:>8}", "-");
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Attention weights over the marked sentence for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub id: String,
    pub aspect: Span,
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
}

/// `None` when the model has no attention (aspect-only classifier).
pub fn export_attention<T: Scalar>(
    model: &StageTwoModel<T>,
    id: &str,
    tokens: &[String],
    aspect: Span,
) -> Result<Option<AttentionRecord>> {
    aspect.check_bounds(tokens.len())?;
    let marked = mark_aspect(tokens, aspect);
    let out = model.predict(id, &marked)?;
    Ok(out.attention.map(|a| AttentionRecord {
        id: id.to_string(),
        aspect,
        tokens: marked.tokens,
        weights: a.alpha.iter().map(|w| w.as_f64()).collect(),
    }))
}
