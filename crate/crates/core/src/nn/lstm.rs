use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;

use super::param::{join, Module, Param};
use crate::scalar::Scalar;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Single-direction LSTM; gate order is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmTape<T> {
    x: Array2<T>,
    /// Activated gates per step, `n x 4H`.
    gates: Array2<T>,
    cells: Array2<T>,
    hidden: Array2<T>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Lstm {
            w_ih: Param::uniform(4 * hidden, inputs, bound, rng),
            w_hh: Param::uniform(4 * hidden, hidden, bound, rng),
            bias: Param::uniform(1, 4 * hidden, bound, rng),
            hidden,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LstmTape<T>) {
        let n = x.nrows();
        let hs = self.hidden;
        let pre_in = x.dot(&self.w_ih.value.t()) + &self.bias.value;
        let mut gates = Array2::zeros((n, 4 * hs));
        let mut cells = Array2::zeros((n, hs));
        let mut hidden = Array2::zeros((n, hs));
        let mut h_prev = Array1::<T>::zeros(hs);
        let mut c_prev = Array1::<T>::zeros(hs);
        for t in 0..n {
            let mut g = &pre_in.row(t) + &self.w_hh.value.dot(&h_prev);
            for k in 0..hs {
                g[k] = sigmoid(g[k]);
                g[hs + k] = sigmoid(g[hs + k]);
                g[2 * hs + k] = g[2 * hs + k].tanh();
                g[3 * hs + k] = sigmoid(g[3 * hs + k]);
            }
            let mut c = Array1::zeros(hs);
            let mut h = Array1::zeros(hs);
            for k in 0..hs {
                c[k] = g[hs + k] * c_prev[k] + g[k] * g[2 * hs + k];
                h[k] = g[3 * hs + k] * c[k].tanh();
            }
            gates.row_mut(t).assign(&g);
            cells.row_mut(t).assign(&c);
            hidden.row_mut(t).assign(&h);
            h_prev = h;
            c_prev = c;
        }
        let tape = LstmTape {
            x: x.clone(),
            gates,
            cells,
            hidden: hidden.clone(),
        };
        (hidden, tape)
    }

    /// Backpropagation through time; returns `dL/dx`.
    pub fn backward(&mut self, tape: &LstmTape<T>, dh: &Array2<T>) -> Array2<T> {
        let n = tape.x.nrows();
        let hs = self.hidden;
        let one = T::one();
        let mut dgates = Array2::<T>::zeros((n, 4 * hs));
        let mut dh_next = Array1::<T>::zeros(hs);
        let mut dc_next = Array1::<T>::zeros(hs);
        for t in (0..n).rev() {
            let g = tape.gates.row(t);
            let c = tape.cells.row(t);
            let mut dg = dgates.row_mut(t);
            for k in 0..hs {
                let (i, f, gg, o) = (g[k], g[hs + k], g[2 * hs + k], g[3 * hs + k]);
                let tc = c[k].tanh();
                let c_prev = if t > 0 { tape.cells[[t - 1, k]] } else { T::zero() };
                let dhk = dh[[t, k]] + dh_next[k];
                let dc = dhk * o * (one - tc * tc) + dc_next[k];
                dg[k] = dc * gg * i * (one - i);
                dg[hs + k] = dc * c_prev * f * (one - f);
                dg[2 * hs + k] = dc * i * (one - gg * gg);
                dg[3 * hs + k] = dhk * tc * o * (one - o);
                dc_next[k] = dc * f;
            }
            dh_next = self.w_hh.value.t().dot(&dgates.row(t));
        }
        self.w_ih.grad += &dgates.t().dot(&tape.x);
        if n > 1 {
            self.w_hh.grad += &dgates.slice(s![1.., ..]).t().dot(&tape.hidden.slice(s![..n - 1, ..]));
        }
        self.bias.grad.row_mut(0).scaled_add(one, &dgates.sum_axis(Axis(0)));
        dgates.dot(&self.w_ih.value)
    }
}

impl<T: Scalar> Module<T> for Lstm<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Forward and backward LSTMs whose outputs are concatenated per token.
#[derive(Debug, Clone)]
pub struct BiLstm<T> {
    pub forward: Lstm<T>,
    pub backward: Lstm<T>,
}

#[derive(Debug, Clone)]
pub struct BiLstmTape<T> {
    fwd: LstmTape<T>,
    bwd: LstmTape<T>,
}

fn reversed<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl<T: Scalar> BiLstm<T> {
    pub fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            forward: Lstm::new(inputs, hidden, rng),
            backward: Lstm::new(inputs, hidden, rng),
        }
    }

    /// Output width (twice the per-direction size).
    pub fn output_size(&self) -> usize {
        2 * self.forward.hidden_size()
    }

    pub fn run(&self, x: &Array2<T>) -> (Array2<T>, BiLstmTape<T>) {
        let (hf, fwd) = self.forward.forward(x);
        let (hb, bwd) = self.backward.forward(&reversed(x));
        let out = concatenate(Axis(1), &[hf.view(), reversed(&hb).view()]).expect("equal row counts");
        (out, BiLstmTape { fwd, bwd })
    }

    pub fn backprop(&mut self, tape: &BiLstmTape<T>, dout: &Array2<T>) -> Array2<T> {
        let hs = self.forward.hidden_size();
        let dhf = dout.slice(s![.., ..hs]).to_owned();
        let dhb = reversed(&dout.slice(s![.., hs..]).to_owned());
        let dxf = self.forward.backward(&tape.fwd, &dhf);
        let dxb = self.backward.backward(&tape.bwd, &dhb);
        dxf + reversed(&dxb)
    }
}

impl<T: Scalar> Module<T> for BiLstm<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.forward.visit_params(&join(prefix, "fwd"), f);
        self.backward.visit_params(&join(prefix, "bwd"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.forward.visit_params_mut(&join(prefix, "fwd"), f);
        self.backward.visit_params_mut(&join(prefix, "bwd"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(m: &BiLstm<f64>, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
        (m.run(x).0 * w).sum()
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m: BiLstm<f64> = BiLstm::new(3, 4, &mut rng);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
        let (out, tape) = m.run(&x);
        assert_eq!(out.dim(), (5, 8));
        let dx = m.backprop(&tape, &w);

        let h = 1e-6;
        let mut worst = 0.0f64;
        let base = m.clone();
        let mut names = Vec::new();
        base.visit_params("", &mut |n, p| names.push((n.to_string(), p.value.dim())));
        for (name, (r, c)) in names {
            for i in 0..r {
                for j in 0..c {
                    let bump = |d: f64| {
                        let mut p = base.clone();
                        p.visit_params_mut("", &mut |n, q| {
                            if n == name {
                                q.value[[i, j]] += d;
                            }
                        });
                        loss(&p, &x, &w)
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let mut an = 0.0;
                    m.visit_params("", &mut |n, q| {
                        if n == name {
                            an = q.grad[[i, j]];
                        }
                    });
                    worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
                }
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");

        for r in 0..5 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&base, &xp, &w) - loss(&base, &xm, &w)) / (2.0 * h);
                assert!((fd - dx[[r, c]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn outputs_depend_on_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m: BiLstm<f64> = BiLstm::new(2, 3, &mut rng);
        let x = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let mut swapped = x.clone();
        swapped.row_mut(5).assign(&x.row(4));
        swapped.row_mut(4).assign(&x.row(5));
        let (a, _) = m.run(&x);
        let (b, _) = m.run(&swapped);
        // position 0 only sees the change through the backward direction
        assert!((&a.row(0) - &b.row(0)).iter().any(|d| d.abs() > 1e-9));
    }
}
