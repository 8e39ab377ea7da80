//! Aspect term extraction head: per-token B/I/O classification.

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::nn::ops::{argmax, nll_rows_with_grad, softmax_rows};
use crate::nn::{param_join, Linear, Module, Param};
use crate::scalar::Scalar;
use crate::tagging::{decode_bio, Tag, TagSequence};

/// Linear projection from hidden states to three tag logits.
#[derive(Debug, Clone)]
pub struct AteHead<T> {
    pub proj: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtePrediction<T> {
    pub probs: Array2<T>,
    pub tags: TagSequence,
    pub spans: BTreeSet<Span>,
}

impl<T: Scalar> AteHead<T> {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Self {
        AteHead {
            proj: Linear::new(hidden, Tag::ALL.len(), rng),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        AteHead {
            proj: Linear::zeros(hidden, Tag::ALL.len()),
        }
    }

    pub fn logits(&self, hidden: &Array2<T>) -> Array2<T> {
        self.proj.forward(hidden)
    }

    /// Accumulates head gradients and returns `dL/dH`.
    pub fn backward(&mut self, hidden: &Array2<T>, dlogits: &Array2<T>) -> Array2<T> {
        self.proj.backward(hidden, dlogits)
    }
}

impl<T: Scalar> Module<T> for AteHead<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.proj.visit_params(&param_join(prefix, "proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.proj.visit_params_mut(&param_join(prefix, "proj"), f);
    }
}

/// Tags from per-token probability rows (argmax, lowest index on ties).
pub fn tags_from_rows<T: Scalar>(rows: &Array2<T>) -> TagSequence {
    TagSequence(
        rows.axis_iter(Axis(0))
            .map(|r| Tag::from_index(argmax(r)).expect("three columns"))
            .collect(),
    )
}

pub fn ate_predict<T: Scalar>(head: &AteHead<T>, hidden: &Array2<T>) -> AtePrediction<T> {
    let probs = softmax_rows(&head.logits(hidden));
    let tags = tags_from_rows(&probs);
    let spans = decode_bio(&tags);
    AtePrediction { probs, tags, spans }
}

/// Summed negative log-probability of the gold tag at every position.
pub fn sequence_nll<T: Scalar>(probs: &Array2<T>, gold: &TagSequence) -> Result<T> {
    if probs.nrows() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "tag sequence",
            expected: probs.nrows(),
            got: gold.len(),
        });
    }
    Ok(gold
        .0
        .iter()
        .enumerate()
        .map(|(i, t)| -probs[[i, t.index()]].ln())
        .sum())
}

pub fn ate_loss<T: Scalar>(probs: &Array2<T>, gold: &TagSequence) -> Result<T> {
    sequence_nll(probs, gold)
}

/// Loss computed from logits (numerically safer) plus `dL/dlogits`.
pub fn sequence_nll_from_logits<T: Scalar>(logits: &Array2<T>, gold: &TagSequence) -> Result<(T, Array2<T>)> {
    if logits.nrows() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "tag sequence",
            expected: logits.nrows(),
            got: gold.len(),
        });
    }
    Ok(nll_rows_with_grad(logits, &gold.indices()))
}
