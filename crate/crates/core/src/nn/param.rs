use ndarray::Array2;
use rand::Rng;

use crate::scalar::Scalar;

/// Trainable matrix with its accumulated gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Array2<T>,
    pub grad: Array2<T>,
    pub frozen: bool,
    pub(crate) moments: Option<(Array2<T>, Array2<T>)>,
    /// Optimizer steps applied so far (drives bias correction).
    pub(crate) steps: u64,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Array2<T>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param {
            value,
            grad,
            frozen: false,
            moments: None,
            steps: 0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        Self::new(Array2::from_shape_fn((rows, cols), |_| T::lit(rng.random_range(-bound..=bound))))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything owning named parameters.
pub trait Module<T: Scalar> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
