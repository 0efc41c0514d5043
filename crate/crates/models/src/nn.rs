//! Layers built on the tape, and the Adam optimiser.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            w: store.add_glorot(format!("{name}.w"), inputs, outputs, rng),
            b: store.add_zeros(format!("{name}.b"), 1, outputs),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w);
        tape.add_bias(y, b)
    }
}

/// Linear layer over binary inputs given as lists of active indices.
#[derive(Debug, Clone, Copy)]
pub struct SparseLinear {
    pub w: ParamId,
    pub b: ParamId,
}

impl SparseLinear {
    /// `expected_active` is the typical number of set inputs per row; the
    /// Glorot limit uses it as the fan-in.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        expected_active: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (expected_active.max(1) + outputs) as f64).sqrt();
        let w = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..limit));
        Self {
            w: store.add(format!("{name}.w"), w),
            b: store.add_zeros(format!("{name}.b"), 1, outputs),
        }
    }

    pub fn forward(&self, tape: &mut Tape, active: Rc<Vec<Vec<usize>>>) -> Var {
        let y = tape.sparse_rows(self.w, active);
        let b = tape.param(self.b);
        tape.add_bias(y, b)
    }
}

/// Two-layer perceptron with a ReLU in between.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), inputs, hidden, rng),
            out: Linear::new(store, &format!("{name}.1"), hidden, outputs, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.relu(h);
        self.out.forward(tape, h)
    }
}

/// Gated recurrent unit:
/// `r = σ(x Wr + h Ur)`, `u = σ(x Wu + h Uu)`, `c = tanh(x Wc + (r*h) Uc)`,
/// `h' = h + u * (c - h)`.
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    /// Input projection to all three gates, `[in, 3H]`.
    pub input: Linear,
    /// Recurrent weights for reset and update gates, `[H, 2H]`.
    pub u_gates: ParamId,
    /// Recurrent weights for the candidate, `[H, H]`.
    pub u_cand: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            input: Linear::new(store, &format!("{name}.in"), inputs, 3 * hidden, rng),
            u_gates: store.add_glorot(format!("{name}.u_gates"), hidden, 2 * hidden, rng),
            u_cand: store.add_glorot(format!("{name}.u_cand"), hidden, hidden, rng),
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, h: Var, x: Var) -> Var {
        let n = self.hidden;
        let xw = self.input.forward(tape, x);
        let ug = tape.param(self.u_gates);
        let hu = tape.matmul(h, ug);
        let xr = tape.slice_cols(xw, 0, n);
        let hr = tape.slice_cols(hu, 0, n);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let xu = tape.slice_cols(xw, n, 2 * n);
        let hu2 = tape.slice_cols(hu, n, 2 * n);
        let u = tape.add(xu, hu2);
        let u = tape.sigmoid(u);
        let rh = tape.mul(r, h);
        let uc = tape.param(self.u_cand);
        let rhu = tape.matmul(rh, uc);
        let xc = tape.slice_cols(xw, 2 * n, 3 * n);
        let c = tape.add(xc, rhu);
        let c = tape.tanh(c);
        let diff = tape.sub(c, h);
        let step = tape.mul(u, diff);
        tape.add(h, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.ids().map(|id| Array2::zeros(store.get(id).dim())).collect();
        Self { config, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One update. Parameters without a gradient are left untouched and their
    /// moments are not decayed.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let lr = c.learning_rate * bc2.sqrt() / bc1;
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else {
                continue;
            };
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= lr * *m / (v.sqrt() + c.eps);
            });
        }
    }
}
