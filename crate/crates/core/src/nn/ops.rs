//! Row-wise softmax and friends.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::scalar::Scalar;

pub fn softmax<T: Scalar>(x: ArrayView1<T>) -> Array1<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let e = x.mapv(|v| (v - max).exp());
    let z: T = e.sum();
    e / z
}

pub fn log_softmax<T: Scalar>(x: ArrayView1<T>) -> Array1<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    x.mapv(|v| v - lse)
}

pub fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = softmax(row.view());
        row.assign(&s);
    }
    out
}

pub fn log_softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = log_softmax(row.view());
        row.assign(&s);
    }
    out
}

/// Gradient through `y = softmax(x)` given `dL/dy`.
pub fn softmax_backward<T: Scalar>(y: ArrayView1<T>, dy: ArrayView1<T>) -> Array1<T> {
    let dot = y.dot(&dy);
    &y * &dy.mapv(|d| d - dot)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(x: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

pub fn relu<T: Scalar>(x: &Array1<T>) -> Array1<T> {
    x.mapv(|v| v.max(T::zero()))
}

pub fn all_finite<T: Scalar>(x: &Array2<T>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Summed negative log-likelihood of `gold` under row-wise softmax of
/// `logits`, with its gradient with respect to the logits.
pub fn nll_rows_with_grad<T: Scalar>(logits: &Array2<T>, gold: &[usize]) -> (T, Array2<T>) {
    debug_assert_eq!(logits.nrows(), gold.len());
    let mut grad = softmax_rows(logits);
    let logp = log_softmax_rows(logits);
    let mut loss = T::zero();
    for (i, &g) in gold.iter().enumerate() {
        loss -= logp[[i, g]];
        grad[[i, g]] -= T::one();
    }
    (loss, grad)
}
