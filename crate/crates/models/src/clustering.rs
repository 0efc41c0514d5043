//! A mixture variant of the intent head for when no small discrete backdoor
//! is available: each of `K` components predicts the target, and training
//! minimises `min_z (-beta log p(z|h) - log N(x; mu_z(h), I))`. Gradients
//! flow only through the winning component, whose index is the inferred `z`.

use ndarray::Array2;
use rand::Rng;

use crate::nn::{Adam, AdamConfig, Linear};
use crate::tape::{ParamStore, Tape};

#[derive(Debug, Clone)]
pub struct MixtureModel {
    pub params: ParamStore,
    body: Linear,
    means: Linear,
    logits: Linear,
    pub components: usize,
    pub target_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringStep {
    /// Mean best-component loss over the batch.
    pub loss: f64,
    pub assignments: Vec<usize>,
}

impl MixtureModel {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, components: usize, target_dim: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let body = Linear::new(&mut params, "mix.body", inputs, hidden, rng);
        let means = Linear::new(&mut params, "mix.means", hidden, components * target_dim, rng);
        let logits = Linear::new(&mut params, "mix.logits", hidden, components, rng);
        Self { params, body, means, logits, components, target_dim }
    }

    /// Per-example, per-component losses
    /// `-beta log p(z|h) + 0.5 |x - mu_z|^2 + 0.5 D log(2 pi)`.
    pub fn component_losses(&self, inputs: &Array2<f64>, targets: &Array2<f64>, beta: f64) -> Array2<f64> {
        let mut tape = Tape::new(&self.params);
        let (logp, means) = self.forward(&mut tape, inputs);
        component_losses(tape.value(logp), tape.value(means), targets, beta, self.target_dim)
    }

    /// Index of the best component per example.
    pub fn assign(&self, inputs: &Array2<f64>, targets: &Array2<f64>, beta: f64) -> Vec<usize> {
        argmin_rows(&self.component_losses(inputs, targets, beta))
    }

    fn forward(&self, tape: &mut Tape, inputs: &Array2<f64>) -> (crate::tape::Var, crate::tape::Var) {
        let x = tape.constant(inputs.clone());
        let h = self.body.forward(tape, x);
        let h = tape.tanh(h);
        let means = self.means.forward(tape, h);
        let logits = self.logits.forward(tape, h);
        (tape.log_softmax(logits), means)
    }

    /// One optimiser step on the best-component loss.
    pub fn train_step(&mut self, opt: &mut Adam, inputs: &Array2<f64>, targets: &Array2<f64>, beta: f64) -> ClusteringStep {
        let b = inputs.nrows();
        let (k, d) = (self.components, self.target_dim);
        let (loss, assignments, grads) = {
            let mut tape = Tape::new(&self.params);
            let (logp, means) = self.forward(&mut tape, inputs);
            let losses = component_losses(tape.value(logp), tape.value(means), targets, beta, d);
            let assignments = argmin_rows(&losses);
            let loss = assignments.iter().enumerate().map(|(i, z)| losses[[i, *z]]).sum::<f64>() / b as f64;

            let mut pick = Array2::zeros((b, k));
            let mut pick_means = Array2::zeros((b, k * d));
            let mut tiled = Array2::zeros((b, k * d));
            for (i, z) in assignments.iter().enumerate() {
                pick[[i, *z]] = -beta / b as f64;
                for j in 0..d {
                    pick_means[[i, z * d + j]] = 0.5 / b as f64;
                    for c in 0..k {
                        tiled[[i, c * d + j]] = targets[[i, j]];
                    }
                }
            }
            let index_term = tape.mul_const(logp, pick);
            let index_term = tape.sum(index_term);
            let t = tape.constant(tiled);
            let diff = tape.sub(means, t);
            let sq = tape.square(diff);
            let fit = tape.mul_const(sq, pick_means);
            let fit = tape.sum(fit);
            let total = tape.add(index_term, fit);
            (loss, assignments, tape.backward(total))
        };
        opt.step(&mut self.params, &grads);
        ClusteringStep { loss, assignments }
    }

    pub fn optimiser(&self, learning_rate: f64) -> Adam {
        Adam::new(AdamConfig { learning_rate, ..AdamConfig::default() }, &self.params)
    }
}

fn component_losses(logp: &Array2<f64>, means: &Array2<f64>, targets: &Array2<f64>, beta: f64, d: usize) -> Array2<f64> {
    let (b, k) = logp.dim();
    let constant = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    Array2::from_shape_fn((b, k), |(i, z)| {
        let sq: f64 = (0..d).map(|j| (targets[[i, j]] - means[[i, z * d + j]]).powi(2)).sum();
        let index = if beta == 0.0 { 0.0 } else { -beta * logp[[i, z]] };
        index + 0.5 * sq + constant
    })
}

fn argmin_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (z, v) in row.iter().enumerate() {
                if *v < row[best] {
                    best = z;
                }
            }
            best
        })
        .collect()
}
