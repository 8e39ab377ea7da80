//! Aspect-conditioned opinion tagging and the attention derived from it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ate::{sequence_nll, tags_from_rows};
use crate::corpus::Span;
use crate::error::Result;
use crate::nn::ops::{softmax, softmax_backward, softmax_rows};
use crate::nn::{param_join, Linear, Module, Param};
use crate::scalar::Scalar;
use crate::tagging::{decode_bio, MarkedSentence, Tag, TagSequence};

/// Which TOWE output the attention scores are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SlaMode {
    #[default]
    Logits,
    Probabilities,
}

impl fmt::Display for SlaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlaMode::Logits => "logits",
            SlaMode::Probabilities => "probabilities",
        })
    }
}

impl FromStr for SlaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "logits" => Ok(SlaMode::Logits),
            "probabilities" | "probs" => Ok(SlaMode::Probabilities),
            other => Err(format!("unknown attention input {other:?}")),
        }
    }
}

/// Scores `beta` and weights `alpha` over marked positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector<T> {
    pub beta: Array1<T>,
    pub alpha: Array1<T>,
}

impl<T: Scalar> AttentionVector<T> {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ToweHead<T> {
    pub proj: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowePrediction<T> {
    pub logits: Array2<T>,
    pub probs: Array2<T>,
    /// Tags over the marked sentence.
    pub tags: TagSequence,
    /// Opinion spans in original coordinates.
    pub spans: BTreeSet<Span>,
}

impl<T: Scalar> TowePrediction<T> {
    /// The per-position vectors attention reads under `mode`.
    pub fn sla_input(&self, mode: SlaMode) -> &Array2<T> {
        match mode {
            SlaMode::Logits => &self.logits,
            SlaMode::Probabilities => &self.probs,
        }
    }
}

impl<T: Scalar> ToweHead<T> {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Self {
        ToweHead {
            proj: Linear::new(hidden, Tag::ALL.len(), rng),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        ToweHead {
            proj: Linear::zeros(hidden, Tag::ALL.len()),
        }
    }

    pub fn logits(&self, hidden: &Array2<T>) -> Array2<T> {
        self.proj.forward(hidden)
    }

    pub fn backward(&mut self, hidden: &Array2<T>, dlogits: &Array2<T>) -> Array2<T> {
        self.proj.backward(hidden, dlogits)
    }
}

impl<T: Scalar> Module<T> for ToweHead<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.proj.visit_params(&param_join(prefix, "proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.proj.visit_params_mut(&param_join(prefix, "proj"), f);
    }
}

/// Decodes marked-sentence tags and maps spans back to the original
/// sentence, dropping marker positions.
pub fn project_opinions(tags: &TagSequence, marked: &MarkedSentence) -> BTreeSet<Span> {
    decode_bio(tags)
        .into_iter()
        .filter_map(|s| marked.project_span(s))
        .collect()
}

pub fn towe_predict<T: Scalar>(head: &ToweHead<T>, hidden: &Array2<T>, marked: &MarkedSentence) -> TowePrediction<T> {
    let logits = head.logits(hidden);
    prediction_from_logits(logits, marked)
}

pub(crate) fn prediction_from_logits<T: Scalar>(logits: Array2<T>, marked: &MarkedSentence) -> TowePrediction<T> {
    let probs = softmax_rows(&logits);
    let tags = tags_from_rows(&probs);
    let spans = project_opinions(&tags, marked);
    TowePrediction {
        logits,
        probs,
        tags,
        spans,
    }
}

pub fn towe_loss<T: Scalar>(probs: &Array2<T>, gold: &TagSequence) -> Result<T> {
    sequence_nll(probs, gold)
}

/// `beta_i = x_i[B] + x_i[I]`, `alpha = softmax(beta)` over every row of
/// `input` (logits or probabilities, as chosen by the caller).
pub fn sla_attention<T: Scalar>(input: &Array2<T>) -> AttentionVector<T> {
    let beta: Array1<T> = input
        .axis_iter(Axis(0))
        .map(|r| r[Tag::B.index()] + r[Tag::I.index()])
        .collect();
    let alpha = softmax(beta.view());
    AttentionVector { beta, alpha }
}

/// Gradient with respect to the attention input rows given `dL/dalpha`.
pub fn sla_backward<T: Scalar>(att: &AttentionVector<T>, dalpha: &Array1<T>) -> Array2<T> {
    let dbeta = softmax_backward(att.alpha.view(), dalpha.view());
    let mut out = Array2::zeros((dbeta.len(), Tag::ALL.len()));
    for (i, &d) in dbeta.iter().enumerate() {
        out[[i, Tag::B.index()]] = d;
        out[[i, Tag::I.index()]] = d;
    }
    out
}

/// Chains `dL/dprobs` back through a row-wise softmax to the logits.
pub fn softmax_rows_backward<T: Scalar>(probs: &Array2<T>, dprobs: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((mut o, p), d) in out
        .axis_iter_mut(Axis(0))
        .zip(probs.axis_iter(Axis(0)))
        .zip(dprobs.axis_iter(Axis(0)))
    {
        o.assign(&softmax_backward(p, d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagging::mark_aspect;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn two_position_logits_example() {
        let att = sla_attention(&array![[0.0, 0.0, 0.0], [2.0, 1.0, -1.0]]);
        assert_eq!(att.beta, array![0.0, 3.0]);
        let e3 = 3f64.exp();
        assert!((att.alpha[0] - 1.0 / (1.0 + e3)).abs() < 1e-12);
        assert!((att.alpha[1] - e3 / (1.0 + e3)).abs() < 1e-12);
        assert!((att.alpha[0] - 0.0474).abs() < 1e-4);
    }

    #[test]
    fn probability_input_example() {
        let third = 1.0 / 3.0;
        let att = sla_attention::<f64>(&array![[third, third, third], [0.6, 0.3, 0.1]]);
        assert!((att.beta[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((att.beta[1] - 0.9).abs() < 1e-12);
        let z = (2.0f64 / 3.0).exp() + 0.9f64.exp();
        assert!((att.alpha[1] - 0.9f64.exp() / z).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_uniform_weights() {
        let att = sla_attention(&Array2::from_elem((7, 3), 0.4f64));
        for a in att.alpha.iter() {
            assert!((a - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_logits_project_opinion() {
        let t = toks("the sashimi wasn't fresh");
        let marked = mark_aspect(&t, Span::new(1, 2));
        // marked: the # sashimi $ wasn't fresh
        let mut logits = Array2::from_elem((6, 3), 0.0f64);
        for i in 0..6 {
            logits[[i, 2]] = 1.0;
        }
        logits[[4, 0]] = 4.0;
        logits[[5, 1]] = 4.0;
        let p = prediction_from_logits(logits, &marked);
        assert_eq!(p.spans, [Span::new(2, 4)].into());
        assert_eq!(Span::new(2, 4).text(&t), vec!["wasn't", "fresh"]);

        let all_o = prediction_from_logits(Array2::from_shape_fn((6, 3), |(_, j)| if j == 2 { 1.0 } else { 0.0 }), &marked);
        assert!(all_o.spans.is_empty());
    }

    #[test]
    fn towe_loss_examples() {
        let uniform = Array2::from_elem((5, 3), 1.0f64 / 3.0);
        let gold: TagSequence = "O O O B I".parse().unwrap();
        assert!((towe_loss(&uniform, &gold).unwrap() - 5.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
        let w = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
        let f = |x: &Array2<f64>| sla_attention(x).alpha.dot(&w);
        let g = sla_backward(&sla_attention(&x), &w);
        let eps = 1e-6;
        for i in 0..5 {
            for j in 0..3 {
                let mut p = x.clone();
                p[[i, j]] += eps;
                let mut m = x.clone();
                m[[i, j]] -= eps;
                assert!(((f(&p) - f(&m)) / (2.0 * eps) - g[[i, j]]).abs() < 1e-8);
            }
        }
        assert!(g.column(Tag::O.index()).iter().all(|v| *v == 0.0));
    }
}
