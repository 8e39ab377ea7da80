//! Sentiment classification from the aspect representation and the
//! attention-weighted opinion representation.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::corpus::{Sentiment, Span};
use crate::error::{Error, Result};
use crate::nn::ops::{argmax, log_softmax, relu, softmax};
use crate::nn::{param_join, Linear, Module, Param};
use crate::scalar::Scalar;

/// Mean of the rows covered by `aspect` (marked coordinates).
pub fn aspect_repr<T: Scalar>(hidden: &Array2<T>, aspect: Span) -> Result<Array1<T>> {
    aspect.check_bounds(hidden.nrows())?;
    if aspect.len() == 0 {
        return Err(Error::EmptySpan);
    }
    Ok(hidden
        .slice(s![aspect.start..aspect.end, ..])
        .mean_axis(Axis(0))
        .expect("non-empty span"))
}

/// `dL/dH` contribution of [`aspect_repr`].
pub fn aspect_repr_backward<T: Scalar>(rows: usize, aspect: Span, dr: ArrayView1<T>) -> Array2<T> {
    let mut out = Array2::zeros((rows, dr.len()));
    let w = T::one() / T::lit(aspect.len() as f64);
    for i in aspect.start..aspect.end {
        out.row_mut(i).scaled_add(w, &dr);
    }
    out
}

/// `r_O = sum_i alpha_i h_i`.
pub fn opinion_repr<T: Scalar>(hidden: &Array2<T>, alpha: &Array1<T>) -> Result<Array1<T>> {
    if alpha.len() != hidden.nrows() {
        return Err(Error::LengthMismatch {
            what: "attention weights",
            expected: hidden.nrows(),
            got: alpha.len(),
        });
    }
    Ok(hidden.t().dot(alpha))
}

/// Two affine layers with a rectifier between them, then softmax.
#[derive(Debug, Clone)]
pub struct AtsaHead<T> {
    pub hidden_layer: Linear<T>,
    pub output: Linear<T>,
    pub dropout: f64,
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AtsaForward<T> {
    pub r: Array1<T>,
    /// Per-entry dropout multipliers (0 or `1/(1-p)`), absent in eval mode.
    mask: Option<Array1<T>>,
    input: Array1<T>,
    pre: Array1<T>,
    act: Array1<T>,
    pub logits: Array1<T>,
    pub probs: Array1<T>,
}

impl<T: Scalar> AtsaForward<T> {
    pub fn sentiment(&self) -> Sentiment {
        Sentiment::from_index(argmax(self.probs.view())).expect("three classes")
    }
}

impl<T: Scalar> AtsaHead<T> {
    /// `inputs` is the width of `r`; the intermediate layer is `hidden` wide.
    pub fn new(inputs: usize, hidden: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        AtsaHead {
            hidden_layer: Linear::new(inputs, hidden, rng),
            output: Linear::new(hidden, Sentiment::ALL.len(), rng),
            dropout,
        }
    }

    pub fn zeros(inputs: usize, hidden: usize, dropout: f64) -> Self {
        AtsaHead {
            hidden_layer: Linear::zeros(inputs, hidden),
            output: Linear::zeros(hidden, Sentiment::ALL.len()),
            dropout,
        }
    }

    pub fn inputs(&self) -> usize {
        self.hidden_layer.inputs()
    }

    /// Runs the classifier on `r`. Dropout is applied only when `rng` is given.
    pub fn forward<R: Rng>(&self, r: Array1<T>, rng: Option<&mut R>) -> AtsaForward<T> {
        let mask = match rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - self.dropout));
                Some(Array1::from_shape_fn(r.len(), |_| {
                    if rng.random::<f64>() < self.dropout {
                        T::zero()
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        };
        let input = match &mask {
            Some(m) => &r * m,
            None => r.clone(),
        };
        let pre = self.hidden_layer.forward_vec(input.view());
        let act = relu(&pre);
        let logits = self.output.forward_vec(act.view());
        let probs = softmax(logits.view());
        AtsaForward {
            r,
            mask,
            input,
            pre,
            act,
            logits,
            probs,
        }
    }

    /// Accumulates gradients given `dL/dlogits`; returns `dL/dr`.
    pub fn backward(&mut self, fwd: &AtsaForward<T>, dlogits: &Array1<T>) -> Array1<T> {
        let dact = self.output.backward_vec(fwd.act.view(), dlogits.view());
        let dpre = Array1::from_shape_fn(dact.len(), |i| {
            if fwd.pre[i] > T::zero() {
                dact[i]
            } else {
                T::zero()
            }
        });
        let dinput = self.hidden_layer.backward_vec(fwd.input.view(), dpre.view());
        match &fwd.mask {
            Some(m) => dinput * m,
            None => dinput,
        }
    }
}

impl<T: Scalar> Module<T> for AtsaHead<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.hidden_layer.visit_params(&param_join(prefix, "hidden"), f);
        self.output.visit_params(&param_join(prefix, "output"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.hidden_layer.visit_params_mut(&param_join(prefix, "hidden"), f);
        self.output.visit_params_mut(&param_join(prefix, "output"), f);
    }
}

/// `[r_A; r_O]`, or `r_A` alone when there is no opinion representation.
pub fn concat_repr<T: Scalar>(r_a: &Array1<T>, r_o: Option<&Array1<T>>) -> Array1<T> {
    match r_o {
        Some(r_o) => concatenate(Axis(0), &[r_a.view(), r_o.view()]).expect("1-d"),
        None => r_a.clone(),
    }
}

/// Evaluation-mode prediction from the two representations.
pub fn atsa_predict<T: Scalar>(head: &AtsaHead<T>, r_a: &Array1<T>, r_o: Option<&Array1<T>>) -> (Array1<T>, Sentiment) {
    let fwd = head.forward::<rand_chacha::ChaCha8Rng>(concat_repr(r_a, r_o), None);
    let s = fwd.sentiment();
    (fwd.probs, s)
}

pub fn atsa_loss<T: Scalar>(p: &Array1<T>, gold: Sentiment) -> T {
    -p[gold.index()].ln()
}

/// Loss from logits plus `dL/dlogits`.
pub fn atsa_loss_from_logits<T: Scalar>(logits: &Array1<T>, gold: Sentiment) -> (T, Array1<T>) {
    let loss = -log_softmax(logits.view())[gold.index()];
    let mut grad = softmax(logits.view());
    grad[gold.index()] -= T::one();
    (loss, grad)
}

pub fn stage_two_loss<T: Scalar>(towe: T, atsa: T) -> T {
    towe + atsa
}
