//! Learned partial models.
//!
//! `h_1 = g(s_0, a_0)` embeds the observed start state and first action. The
//! recurrent core then consumes `[z_t, a_t]` (causal) or `a_t` alone
//! (non-causal); the non-causal input never contains `z`, so the model cannot
//! read it. Two heads sit on `h_t`: a target head predicting the reward that
//! led to `h_t` and the discounted value of what follows, and an intent head
//! giving `p(z_t | h_t)`. A separate head on the start state gives the action
//! prior used at search roots.

use std::rc::Rc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Gru, Linear, Mlp, SparseLinear};
use crate::tape::{one_hot_rows, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ncpm,
    Cpm,
}

impl ModelKind {
    pub fn is_causal(self) -> bool {
        matches!(self, ModelKind::Cpm)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ncpm => "ncpm",
            ModelKind::Cpm => "cpm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Size of the binary state-feature vector.
    pub num_features: usize,
    pub num_actions: usize,
    pub num_intents: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    /// Typical number of active state features, used for initialisation.
    pub expected_active: usize,
}

impl ModelConfig {
    /// Shapes for one-hot tabular states.
    pub fn tabular(kind: ModelKind, num_states: usize, num_actions: usize) -> Self {
        Self {
            kind,
            num_features: num_states,
            num_actions,
            num_intents: num_actions,
            hidden: 64,
            head_hidden: 64,
            expected_active: 1,
        }
    }

    fn update_inputs(&self) -> usize {
        if self.kind.is_causal() {
            self.num_intents + self.num_actions
        } else {
            self.num_actions
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    g_state: SparseLinear,
    g_action: ParamId,
    g_out: Linear,
    core: Gru,
    target_head: Mlp,
    intent_head: Mlp,
    root_state: SparseLinear,
    root_out: Linear,
}

/// Graph outputs for a batch of model states.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub reward: Var,
    pub value: Var,
    pub intent_logits: Var,
}

/// Point predictions at one model state.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub reward: f64,
    pub value: f64,
    pub intent: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LearnedPartialModel {
    config: ModelConfig,
    params: ParamStore,
    layers: Layers,
}

impl LearnedPartialModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = &config;
        let layers = Layers {
            g_state: SparseLinear::new(&mut p, "g.state", c.num_features, c.hidden, c.expected_active, &mut rng),
            g_action: p.add_glorot("g.action", c.num_actions, c.hidden, &mut rng),
            g_out: Linear::new(&mut p, "g.out", c.hidden, c.hidden, &mut rng),
            core: Gru::new(&mut p, "core", c.update_inputs(), c.hidden, &mut rng),
            target_head: Mlp::new(&mut p, "target", c.hidden, c.head_hidden, 2, &mut rng),
            intent_head: Mlp::new(&mut p, "intent", c.hidden, c.head_hidden, c.num_intents, &mut rng),
            root_state: SparseLinear::new(&mut p, "root.state", c.num_features, c.head_hidden, c.expected_active, &mut rng),
            root_out: Linear::new(&mut p, "root.out", c.head_hidden, c.num_actions, &mut rng),
        };
        Self { config, params: p, layers }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `h_1 = tanh(W relu(S s_0 + A a_0 + b) + c)` for a batch.
    pub fn initial(&self, tape: &mut Tape, states: Rc<Vec<Vec<usize>>>, a0: &[usize]) -> Var {
        let s = self.layers.g_state.forward(tape, states);
        let onehot = tape.constant(one_hot_rows(a0, self.config.num_actions));
        let wa = tape.param(self.layers.g_action);
        let a = tape.matmul(onehot, wa);
        let pre = tape.add(s, a);
        let hidden = tape.relu(pre);
        let out = self.layers.g_out.forward(tape, hidden);
        tape.tanh(out)
    }

    /// Recurrent update. `z` is only read by the causal model.
    pub fn update(&self, tape: &mut Tape, h: Var, z: &[usize], a: &[usize]) -> Var {
        let x = self.update_input(z, a);
        let x = tape.constant(x);
        self.layers.core.forward(tape, h, x)
    }

    fn update_input(&self, z: &[usize], a: &[usize]) -> Array2<f64> {
        let c = &self.config;
        let actions = one_hot_rows(a, c.num_actions);
        if !c.kind.is_causal() {
            return actions;
        }
        let intents = one_hot_rows(z, c.num_intents);
        ndarray::concatenate(ndarray::Axis(1), &[intents.view(), actions.view()]).expect("same batch size")
    }

    pub fn heads(&self, tape: &mut Tape, h: Var) -> HeadVars {
        let targets = self.layers.target_head.forward(tape, h);
        let reward = tape.slice_cols(targets, 0, 1);
        let value = tape.slice_cols(targets, 1, 2);
        let intent_logits = self.layers.intent_head.forward(tape, h);
        HeadVars { reward, value, intent_logits }
    }

    pub fn root_logits(&self, tape: &mut Tape, states: Rc<Vec<Vec<usize>>>) -> Var {
        let x = self.layers.root_state.forward(tape, states);
        let x = tape.relu(x);
        self.layers.root_out.forward(tape, x)
    }

    pub fn initial_state(&self, features: &[usize], a0: usize) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let h = self.initial(&mut tape, Rc::new(vec![features.to_vec()]), &[a0]);
        tape.value(h).row(0).to_vec()
    }

    pub fn next_state(&self, h: &[f64], z: usize, a: usize) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let hv = tape.constant(row(h));
        let next = self.update(&mut tape, hv, &[z], &[a]);
        tape.value(next).row(0).to_vec()
    }

    pub fn predict(&self, h: &[f64]) -> Prediction {
        let mut tape = Tape::new(&self.params);
        let hv = tape.constant(row(h));
        let heads = self.heads(&mut tape, hv);
        let logp = tape.log_softmax(heads.intent_logits);
        Prediction {
            reward: tape.scalar(heads.reward),
            value: tape.scalar(heads.value),
            intent: tape.value(logp).row(0).iter().map(|v| v.exp()).collect(),
        }
    }

    pub fn root_prior(&self, features: &[usize]) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let logits = self.root_logits(&mut tape, Rc::new(vec![features.to_vec()]));
        let logp = tape.log_softmax(logits);
        tape.value(logp).row(0).iter().map(|v| v.exp()).collect()
    }

    /// `r + discount * v` at `g(s, a)` for a batch, used as a bootstrap.
    pub fn q_values(&self, states: Rc<Vec<Vec<usize>>>, actions: &[usize], discount: f64) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let h = self.initial(&mut tape, states, actions);
        let heads = self.heads(&mut tape, h);
        let r = tape.value(heads.reward);
        let v = tape.value(heads.value);
        r.iter().zip(v.iter()).map(|(r, v)| r + discount * v).collect()
    }
}

fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intent_head_is_a_distribution() {
        for kind in [ModelKind::Ncpm, ModelKind::Cpm] {
            let m = LearnedPartialModel::new(ModelConfig::tabular(kind, 4, 2), 1);
            let h = m.initial_state(&[0], 1);
            let p = m.predict(&h);
            assert!((p.intent.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let prior = m.root_prior(&[2]);
            assert!((prior.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ncpm_ignores_intent() {
        let m = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Ncpm, 4, 2), 3);
        let h = m.initial_state(&[0], 0);
        assert_eq!(m.next_state(&h, 0, 1), m.next_state(&h, 1, 1));
        let c = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Cpm, 4, 2), 3);
        let h = c.initial_state(&[0], 0);
        assert_ne!(c.next_state(&h, 0, 1), c.next_state(&h, 1, 1));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig::tabular(ModelKind::Cpm, 4, 2);
        let a = LearnedPartialModel::new(cfg.clone(), 9);
        let b = LearnedPartialModel::new(cfg, 9);
        assert_eq!(a.params(), b.params());
    }
}
