//! Policy improvement inside a learned partial model.
//!
//! Acting heads `pi(a|s)`, `V(s)` live on real agent states; simulation heads
//! `pi_h(a|h,z)`, `V_h(h,z)` live on model states. A rollout starts at a real
//! state, takes the first action from `pi` and values it with `V`, then
//! samples `z ~ p(z|h)` and `a ~ pi_h` inside the model. All four heads are
//! trained by advantage actor-critic on the simulated rewards, and `V_h` is
//! pulled towards `V` on model states aligned with real states.

use std::rc::Rc;

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cpm_core::dist::sample_categorical;
use cpm_core::mdp::{evaluate_marginal, sample_trajectories, FactoredPolicy, TabularMdp, Trajectory};

use crate::error::{Error, Result};
use crate::model::LearnedPartialModel;
use crate::nn::{Adam, AdamConfig, Mlp};
use crate::tape::{column, one_hot_rows, Gradients, ParamStore, Tape, Var};
use crate::train::Episode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynaConfig {
    pub num_updates: usize,
    /// Real start states per update.
    pub batch_size: usize,
    pub rollout_length: usize,
    pub learning_rate: f64,
    pub entropy_cost: f64,
    pub value_cost: f64,
    pub tether_cost: f64,
    pub discount: f64,
    pub hidden: usize,
    /// Updates between learning-curve points.
    pub eval_every: usize,
}

impl Default for DynaConfig {
    fn default() -> Self {
        Self {
            num_updates: 2000,
            batch_size: 32,
            rollout_length: 8,
            learning_rate: 3e-4,
            entropy_cost: 4e-4,
            value_cost: 0.5,
            tether_cost: 1.0,
            discount: 1.0,
            hidden: 32,
            eval_every: 100,
        }
    }
}

impl DynaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.rollout_length == 0 || self.eval_every == 0 {
            return Err(Error::InvalidParameter("batch size, rollout length and eval interval must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::InvalidParameter("learning rate must be positive and discount in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Fixed sub-optimal bear behaviour: forest or home with equal probability,
/// then the right bear action with probability 0.9. The intent rows are
/// chosen so the action marginals match exactly after epsilon-exploration.
pub fn mixed_bear_behavior(epsilon: f64) -> Result<FactoredPolicy> {
    if !(epsilon > 0.0 && epsilon < 0.2) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside (0, 0.2)")));
    }
    let correct = (0.9 - epsilon / 2.0) / (1.0 - epsilon);
    let intent = vec![vec![0.5, 0.5], vec![correct, 1.0 - correct], vec![1.0 - correct, correct], vec![0.5, 0.5]];
    Ok(cpm_core::mdp::epsilon_factored(intent, epsilon, 2)?)
}

pub fn collect_behavior(mdp: &TabularMdp, policy: &FactoredPolicy, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    Ok(sample_trajectories(mdp, policy, n, seed)?)
}

/// A model state aligned with the real state it stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct TetherPair {
    pub h: Vec<f64>,
    pub z: usize,
    pub state: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynaPoint {
    pub step: usize,
    /// `V(s_0)` from the acting value head.
    pub predicted_value: f64,
    /// True value of the acting policy in the environment.
    pub real_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynaLoss {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub tether: f64,
}

#[derive(Debug, Clone)]
pub struct DynaHeads {
    pub params: ParamStore,
    pi: Mlp,
    v: Mlp,
    pi_h: Mlp,
    v_h: Mlp,
    num_states: usize,
    num_intents: usize,
    causal: bool,
}

impl DynaHeads {
    pub fn new(num_states: usize, model: &LearnedPartialModel, hidden: usize, seed: u64) -> Self {
        let c = model.config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let sim_inputs = c.hidden + c.num_intents;
        let pi = Mlp::new(&mut p, "pi", num_states, hidden, c.num_actions, &mut rng);
        let v = Mlp::new(&mut p, "v", num_states, hidden, 1, &mut rng);
        let pi_h = Mlp::new(&mut p, "pi_h", sim_inputs, hidden, c.num_actions, &mut rng);
        let v_h = Mlp::new(&mut p, "v_h", sim_inputs, hidden, 1, &mut rng);
        Self {
            params: p,
            pi,
            v,
            pi_h,
            v_h,
            num_states,
            num_intents: c.num_intents,
            causal: c.kind.is_causal(),
        }
    }

    fn state_input(&self, tape: &mut Tape, states: &[usize]) -> Var {
        tape.constant(one_hot_rows(states, self.num_states))
    }

    /// `[h, onehot z]`; the intent block is zero for non-causal models.
    fn sim_input(&self, tape: &mut Tape, h: &Array2<f64>, z: &[usize]) -> Var {
        let intents = if self.causal {
            one_hot_rows(z, self.num_intents)
        } else {
            Array2::zeros((h.nrows(), self.num_intents))
        };
        tape.constant(concatenate(Axis(1), &[h.view(), intents.view()]).expect("same batch size"))
    }

    pub fn acting_policy(&self, s: usize) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let x = self.state_input(&mut tape, &[s]);
        let logits = self.pi.forward(&mut tape, x);
        let logp = tape.log_softmax(logits);
        tape.value(logp).row(0).iter().map(|v| v.exp()).collect()
    }

    pub fn acting_table(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.acting_policy(s)).collect()
    }

    pub fn value(&self, s: usize) -> f64 {
        let mut tape = Tape::new(&self.params);
        let x = self.state_input(&mut tape, &[s]);
        let v = self.v.forward(&mut tape, x);
        tape.scalar(v)
    }

    pub fn simulation_value(&self, h: &[f64], z: usize) -> f64 {
        let mut tape = Tape::new(&self.params);
        let hv = Array2::from_shape_vec((1, h.len()), h.to_vec()).expect("row");
        let x = self.sim_input(&mut tape, &hv, &[z]);
        let v = self.v_h.forward(&mut tape, x);
        tape.scalar(v)
    }

    /// Mean of `(V_h(h, z) - V(s))^2` with `V(s)` held fixed.
    fn tether_graph(&self, tape: &mut Tape, pairs: &[TetherPair]) -> Var {
        let states: Vec<usize> = pairs.iter().map(|p| p.state).collect();
        let x = self.state_input(tape, &states);
        let target = self.v.forward(tape, x);
        let target = tape.constant(tape.value(target).clone());
        let width = pairs.first().map_or(0, |p| p.h.len());
        let h = Array2::from_shape_fn((pairs.len(), width), |(i, j)| pairs[i].h[j]);
        let z: Vec<usize> = pairs.iter().map(|p| p.z).collect();
        let input = self.sim_input(tape, &h, &z);
        let pred = self.v_h.forward(tape, input);
        let diff = tape.sub(pred, target);
        let sq = tape.square(diff);
        let sum = tape.sum(sq);
        tape.scale(sum, 1.0 / pairs.len() as f64)
    }

    /// The tether penalty and its gradient.
    pub fn value_tether(&self, pairs: &[TetherPair]) -> Result<(f64, Gradients)> {
        if pairs.is_empty() {
            return Err(Error::InvalidParameter("no tether pairs".into()));
        }
        let mut tape = Tape::new(&self.params);
        let loss = self.tether_graph(&mut tape, pairs);
        Ok((tape.scalar(loss), tape.backward(loss)))
    }
}

/// `-sum_b A_b log pi(a_b)` over the rows of `logp`, scaled by `weight`.
/// Its gradient is the score-function policy-gradient estimate.
pub fn policy_gradient_loss(tape: &mut Tape, logp: Var, actions: &[usize], advantages: &[f64], weight: f64) -> Var {
    let (rows, cols) = tape.value(logp).dim();
    let mut w = Array2::zeros((rows, cols));
    for (b, (a, adv)) in actions.iter().zip(advantages).enumerate() {
        w[[b, *a]] = -adv * weight;
    }
    let picked = tape.mul_const(logp, w);
    tape.sum(picked)
}

/// `sum_b mask_b sum_a p log p`, i.e. minus the masked entropy, scaled.
fn negative_entropy(tape: &mut Tape, logp: Var, mask: &[f64], weight: f64) -> Var {
    let p = tape.exp(logp);
    let plogp = tape.mul(p, logp);
    let cols = tape.value(logp).ncols();
    let m = Array2::from_shape_fn((mask.len(), cols), |(b, _)| mask[b] * weight);
    let masked = tape.mul_const(plogp, m);
    tape.sum(masked)
}

fn mean_entropy(logp: &Array2<f64>, mask: &[f64]) -> f64 {
    let total: f64 = logp.rows().into_iter().zip(mask).map(|(row, m)| -m * row.iter().map(|l| l.exp() * l).sum::<f64>()).sum();
    total / mask.len() as f64
}

fn sample_rows<R: Rng + ?Sized>(logp: &Array2<f64>, rng: &mut R) -> Vec<usize> {
    logp.rows()
        .into_iter()
        .map(|row| {
            let p: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            sample_categorical(&p, rng)
        })
        .collect()
}

fn model_heads(model: &LearnedPartialModel, h: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let mut tape = Tape::new(model.params());
    let hv = tape.constant(h.clone());
    let heads = model.heads(&mut tape, hv);
    let logp = tape.log_softmax(heads.intent_logits);
    (tape.value(heads.reward).column(0).to_vec(), tape.value(logp).clone())
}

fn model_initial(model: &LearnedPartialModel, states: &[usize], a0: &[usize]) -> Array2<f64> {
    let mut tape = Tape::new(model.params());
    let rows = Rc::new(states.iter().map(|s| vec![*s]).collect::<Vec<_>>());
    let h = model.initial(&mut tape, rows, a0);
    tape.value(h).clone()
}

fn model_update(model: &LearnedPartialModel, h: &Array2<f64>, z: &[usize], a: &[usize]) -> Array2<f64> {
    let mut tape = Tape::new(model.params());
    let hv = tape.constant(h.clone());
    let next = model.update(&mut tape, hv, z, a);
    tape.value(next).clone()
}

/// Model states along real episodes, paired with the real state and the
/// recorded intent at each step after the first.
pub fn tether_pairs(model: &LearnedPartialModel, episodes: &[Episode]) -> Vec<TetherPair> {
    let mut out = Vec::new();
    for e in episodes.iter().filter(|e| e.len() > 1) {
        let mut h = model.initial_state(&e.states[0], e.actions[0]);
        for t in 1..e.len() {
            let state = *e.states[t].first().expect("tabular state");
            out.push(TetherPair { h: h.clone(), z: e.intents[t], state });
            if t + 1 < e.len() {
                h = model.next_state(&h, e.intents[t], e.actions[t]);
            }
        }
    }
    out
}

/// Trains acting heads from simulated experience and records how the
/// predicted start value compares with the true value of the acting policy.
pub struct Dyna<'m> {
    pub heads: DynaHeads,
    pub config: DynaConfig,
    model: &'m LearnedPartialModel,
    /// `(state, steps_left)` for every visited non-terminal real state.
    starts: Vec<(usize, usize)>,
    pairs: Vec<TetherPair>,
    optimiser: Adam,
    rng: ChaCha8Rng,
    updates: usize,
}

impl<'m> Dyna<'m> {
    pub fn new(model: &'m LearnedPartialModel, mdp: &TabularMdp, episodes: &[Episode], config: DynaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if model.config().num_actions != mdp.num_actions() || model.config().num_features != mdp.num_states() {
            return Err(Error::InvalidParameter("model shapes do not match the MDP".into()));
        }
        let starts: Vec<(usize, usize)> = episodes
            .iter()
            .flat_map(|e| (0..e.len()).map(move |t| (e.states[t][0], e.len() - t)))
            .collect();
        if starts.is_empty() {
            return Err(Error::InvalidParameter("no real states to start rollouts from".into()));
        }
        let pairs = tether_pairs(model, episodes);
        let heads = DynaHeads::new(mdp.num_states(), model, config.hidden, seed);
        let optimiser = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() }, &heads.params);
        let rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        Ok(Self { heads, config, model, starts, pairs, optimiser, rng, updates: 0 })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// One actor-critic update on a fresh batch of model rollouts.
    pub fn update(&mut self) -> Result<DynaLoss> {
        let c = self.config.clone();
        let b = c.batch_size;
        let picks: Vec<(usize, usize)> = (0..b).map(|_| self.starts[self.rng.random_range(0..self.starts.len())]).collect();
        let states: Vec<usize> = picks.iter().map(|p| p.0).collect();
        let steps_left: Vec<usize> = picks.iter().map(|p| p.1).collect();
        let n = c.rollout_length;
        let scale = 1.0 / b as f64;
        let heads = &self.heads;
        let model = self.model;

        let mut tape = Tape::new(&heads.params);
        // Per step: log-probabilities, values, actions, rewards, active mask.
        let mut logps = Vec::new();
        let mut values = Vec::new();
        let mut actions = Vec::new();
        let mut rewards: Vec<Vec<f64>> = Vec::new();
        let mut masks: Vec<Vec<f64>> = Vec::new();

        let x = heads.state_input(&mut tape, &states);
        let logits = heads.pi.forward(&mut tape, x);
        let logp = tape.log_softmax(logits);
        let v = heads.v.forward(&mut tape, x);
        let a0 = sample_rows(tape.value(logp), &mut self.rng);
        let mut h = model_initial(model, &states, &a0);
        let (r, mut intent_logp) = model_heads(model, &h);
        logps.push(logp);
        values.push(v);
        actions.push(a0);
        rewards.push(r);
        masks.push(vec![1.0; b]);

        for t in 1..=n {
            let active: Vec<f64> = steps_left.iter().map(|k| if t < *k { 1.0 } else { 0.0 }).collect();
            if active.iter().all(|m| *m == 0.0) {
                break;
            }
            let z = sample_rows(&intent_logp, &mut self.rng);
            let input = heads.sim_input(&mut tape, &h, &z);
            let v = heads.v_h.forward(&mut tape, input);
            if t == n {
                // Bootstrap only.
                values.push(v);
                masks.push(active);
                break;
            }
            let logits = heads.pi_h.forward(&mut tape, input);
            let logp = tape.log_softmax(logits);
            let a = sample_rows(tape.value(logp), &mut self.rng);
            h = model_update(model, &h, &z, &a);
            let (r, next_logp) = model_heads(model, &h);
            intent_logp = next_logp;
            logps.push(logp);
            values.push(v);
            actions.push(a);
            rewards.push(r);
            masks.push(active);
        }

        // n-step returns, bootstrapping from V_h where the rollout was cut short.
        let steps = logps.len();
        let mut ret: Vec<f64> = if values.len() > steps {
            let boot = tape.value(values[steps]);
            (0..b).map(|i| masks[steps][i] * boot[[i, 0]]).collect()
        } else {
            vec![0.0; b]
        };
        let mut returns = vec![Vec::new(); steps];
        for t in (0..steps).rev() {
            ret = (0..b).map(|i| masks[t][i] * (rewards[t][i] + c.discount * ret[i])).collect();
            returns[t] = ret.clone();
        }

        let mut loss = DynaLoss::default();
        let mut terms = Vec::new();
        for t in 0..steps {
            let v = tape.value(values[t]).column(0).to_vec();
            let adv: Vec<f64> = (0..b).map(|i| masks[t][i] * (returns[t][i] - v[i])).collect();
            let pg = policy_gradient_loss(&mut tape, logps[t], &actions[t], &adv, scale);
            let ent = negative_entropy(&mut tape, logps[t], &masks[t], c.entropy_cost * scale);
            let target = tape.constant(column(&returns[t]));
            let diff = tape.sub(values[t], target);
            let sq = tape.square(diff);
            let weights = column(&masks[t].iter().map(|m| m * 0.5 * c.value_cost * scale).collect::<Vec<_>>());
            let vl = tape.mul_const(sq, weights);
            let vl = tape.sum(vl);
            loss.policy += tape.scalar(pg);
            loss.entropy += mean_entropy(tape.value(logps[t]), &masks[t]);
            loss.value += tape.scalar(vl);
            terms.extend([pg, ent, vl]);
        }
        if !self.pairs.is_empty() && c.tether_cost > 0.0 {
            let chosen: Vec<TetherPair> =
                (0..b).map(|_| self.pairs[self.rng.random_range(0..self.pairs.len())].clone()).collect();
            let tether = heads.tether_graph(&mut tape, &chosen);
            loss.tether = tape.scalar(tether);
            terms.push(tape.scale(tether, c.tether_cost));
        }
        let mut total = terms[0];
        for term in &terms[1..] {
            total = tape.add(total, *term);
        }
        let grads = tape.backward(total);
        self.optimiser.step(&mut self.heads.params, &grads);
        self.updates += 1;
        Ok(loss)
    }

    /// Predicted and true value of the current acting policy.
    pub fn evaluate(&self, mdp: &TabularMdp) -> Result<DynaPoint> {
        let s0 = mdp.start_state();
        let vf = evaluate_marginal(mdp, &self.heads.acting_table())?;
        Ok(DynaPoint { step: self.updates, predicted_value: self.heads.value(s0), real_value: vf.get(s0, mdp.horizon()) })
    }

    /// Runs all updates, recording a point before the first update and every
    /// `eval_every` updates.
    pub fn run(&mut self, mdp: &TabularMdp) -> Result<Vec<DynaPoint>> {
        let mut curve = vec![self.evaluate(mdp)?];
        while self.updates < self.config.num_updates {
            self.update()?;
            if self.updates % self.config.eval_every == 0 || self.updates == self.config.num_updates {
                curve.push(self.evaluate(mdp)?);
            }
        }
        Ok(curve)
    }
}
