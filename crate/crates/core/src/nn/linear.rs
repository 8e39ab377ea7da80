use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::param::{join, Module, Param};
use crate::scalar::Scalar;

/// Affine map `y = x W^T + b` applied to each row.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform initialization in `±1/sqrt(inputs)`.
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Linear {
            weight: Param::uniform(outputs, inputs, bound, rng),
            bias: Param::uniform(1, outputs, bound, rng),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Param::zeros(outputs, inputs),
            bias: Param::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        x.dot(&self.weight.value.t()) + &self.bias.value
    }

    pub fn forward_vec(&self, x: ArrayView1<T>) -> Array1<T> {
        self.weight.value.dot(&x) + &self.bias.value.row(0)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
        self.weight.grad += &dy.t().dot(x);
        self.bias.grad.row_mut(0).scaled_add(T::one(), &dy.sum_axis(Axis(0)));
        dy.dot(&self.weight.value)
    }

    pub fn backward_vec(&mut self, x: ArrayView1<T>, dy: ArrayView1<T>) -> Array1<T> {
        let outer = dy
            .to_owned()
            .insert_axis(Axis(1))
            .dot(&x.to_owned().insert_axis(Axis(0)));
        self.weight.grad += &outer;
        self.bias.grad.row_mut(0).scaled_add(T::one(), &dy);
        self.weight.value.t().dot(&dy)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
