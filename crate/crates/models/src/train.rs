//! Model training from replayed trajectories.

use std::collections::VecDeque;
use std::rc::Rc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cpm_core::dist::{sample_categorical, ROW_TOL};
use cpm_core::mdp::{epsilon_exploration, Trajectory};

use crate::error::{Error, Result};
use crate::model::LearnedPartialModel;
use crate::nn::{Adam, AdamConfig};
use crate::tape::{column, Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub overshoot_length: usize,
    pub nstep_length: usize,
    pub discount: f64,
    pub c_reward: f64,
    pub c_value: f64,
    pub c_policy: f64,
    pub epsilon: f64,
    pub replay_capacity: usize,
    pub replays_per_trajectory: usize,
    pub num_steps: usize,
    /// When set, the learning rate decays linearly to this value over
    /// `num_steps`.
    pub final_learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 512,
            overshoot_length: 5,
            nstep_length: 10,
            discount: 0.995,
            c_reward: 1.0,
            c_value: 1.0,
            c_policy: 300.0,
            epsilon: 0.01,
            replay_capacity: 500_000,
            replays_per_trajectory: 4,
            num_steps: 2000,
            final_learning_rate: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("discount", self.discount),
            ("batch_size", self.batch_size as f64),
            ("overshoot_length", self.overshoot_length as f64),
            ("nstep_length", self.nstep_length as f64),
            ("replay_capacity", self.replay_capacity as f64),
            ("replays_per_trajectory", self.replays_per_trajectory as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("c_reward", self.c_reward), ("c_value", self.c_value), ("c_policy", self.c_policy)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0,1), got {v}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0,1] so that every action has support, got {}",
                self.epsilon
            )));
        }
        if self.discount > 1.0 {
            return Err(Error::InvalidParameter(format!("discount must be at most 1, got {}", self.discount)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }
}

/// A trajectory in model-input form. `states` has `len + 1` entries, each a
/// list of active feature indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub states: Vec<Vec<usize>>,
    pub actions: Vec<usize>,
    pub intents: Vec<usize>,
    pub intent_dists: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Episode {
    /// Tabular states become one-hot features.
    pub fn from_trajectory(t: &Trajectory) -> Self {
        let mut states = vec![vec![t.start_state]];
        states.extend(t.steps.iter().map(|s| vec![s.next_state]));
        Self {
            states,
            actions: t.steps.iter().map(|s| s.a).collect(),
            intents: t.steps.iter().map(|s| s.z).collect(),
            intent_dists: t.steps.iter().map(|s| s.intent_dist.clone()).collect(),
            rewards: t.steps.iter().map(|s| s.reward).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `p(z | s, a) ∝ m(z|s) pi(a|z)` under epsilon-exploration around the intent.
pub fn intent_posterior(intent_dist: &[f64], a: usize, num_actions: usize, epsilon: f64) -> Option<Vec<f64>> {
    let explore = epsilon_exploration(epsilon, num_actions);
    let mut post: Vec<f64> = intent_dist.iter().zip(&explore).map(|(m, row)| m * row[a]).collect();
    let total: f64 = post.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    post.iter_mut().for_each(|p| *p /= total);
    Some(post)
}

fn resample_at<R: Rng + ?Sized>(
    intent_dist: &[f64],
    a: usize,
    num_actions: usize,
    epsilon: f64,
    t: usize,
    rng: &mut R,
) -> Result<usize> {
    let post = intent_posterior(intent_dist, a, num_actions, epsilon).ok_or_else(|| {
        Error::InvalidParameter(format!("zero posterior intent mass at step {t} for action {a}"))
    })?;
    Ok(sample_categorical(&post, rng))
}

/// Draws fresh intents from their posterior given the stored intent
/// distribution and the executed action. Actions and rewards are unchanged.
pub fn resample_intents<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    num_actions: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut out = trajectory.clone();
    for (t, step) in out.steps.iter_mut().enumerate() {
        step.z = resample_at(&step.intent_dist, step.a, num_actions, epsilon, t, rng)?;
    }
    Ok(out)
}

/// Shuffling buffer of training windows. Every window start of every stored
/// episode is queued `replays` times; the queue is reshuffled when drained.
#[derive(Debug, Clone)]
pub struct Replay {
    episodes: VecDeque<Rc<Episode>>,
    windows: usize,
    capacity: usize,
    replays: usize,
    queue: Vec<(Rc<Episode>, usize)>,
}

impl Replay {
    /// `capacity` counts stored transitions.
    pub fn new(capacity: usize, replays: usize) -> Self {
        Self { episodes: VecDeque::new(), windows: 0, capacity, replays: replays.max(1), queue: Vec::new() }
    }

    pub fn push(&mut self, episode: Episode) {
        if episode.is_empty() {
            return;
        }
        self.windows += episode.len();
        self.episodes.push_back(Rc::new(episode));
        while self.windows > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("non-empty");
            self.windows -= old.len();
        }
    }

    pub fn extend(&mut self, episodes: impl IntoIterator<Item = Episode>) {
        for e in episodes {
            self.push(e);
        }
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.windows
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<Vec<(Rc<Episode>, usize)>> {
        if self.episodes.is_empty() {
            return Err(Error::InvalidParameter("replay is empty".into()));
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.queue.is_empty() {
                self.refill(rng);
            }
            out.push(self.queue.pop().expect("refilled"));
        }
        Ok(out)
    }

    fn refill<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for e in &self.episodes {
            for t in 0..e.len() {
                for _ in 0..self.replays {
                    self.queue.push((Rc::clone(e), t));
                }
            }
        }
        self.queue.shuffle(rng);
    }
}

/// Which loss terms contribute to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossMask {
    pub reward: bool,
    pub value: bool,
    pub intent: bool,
    pub root: bool,
}

impl LossMask {
    pub const ALL: Self = Self { reward: true, value: true, intent: true, root: true };

    pub fn only_reward() -> Self {
        Self { reward: true, value: false, intent: false, root: false }
    }

    pub fn only_value() -> Self {
        Self { reward: false, value: true, intent: false, root: false }
    }

    pub fn only_intent() -> Self {
        Self { reward: false, value: false, intent: true, root: false }
    }
}

/// Per-term losses, averaged over the batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub reward: f64,
    pub value: f64,
    /// Exact KL from the stored intent distribution to the intent head.
    pub intent_kl: f64,
    /// Cross-entropy of the root prior against the behaviour action marginal.
    pub root: f64,
}

/// A fully materialised training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub unroll: usize,
    pub start_states: Rc<Vec<Vec<usize>>>,
    pub first_actions: Vec<usize>,
    /// Per unroll step `k`, the intent and action fed to the update from
    /// `h_k+1` to `h_k+2`.
    pub update_intents: Vec<Vec<usize>>,
    pub update_actions: Vec<Vec<usize>>,
    pub reward_targets: Vec<Vec<f64>>,
    pub value_targets: Vec<Vec<f64>>,
    /// 1 where step `k` lies inside the episode.
    pub step_mask: Vec<Vec<f64>>,
    /// Stored intent distributions for the state reached after step `k`, zero
    /// rows past the end of the episode.
    pub intent_targets: Vec<Array2<f64>>,
    /// Behaviour action marginal at the start state.
    pub root_targets: Array2<f64>,
}

/// Builds a batch of windows. Intents are resampled from their posterior;
/// value targets are `L_u`-step discounted returns with a bootstrap from
/// `bootstrap(states, actions)` when the episode continues.
pub fn build_batch<R: Rng + ?Sized>(
    windows: &[(Rc<Episode>, usize)],
    model: &LearnedPartialModel,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Batch> {
    let mc = model.config();
    let n_a = mc.num_actions;
    let n_z = mc.num_intents;
    let b = windows.len();
    let unroll = windows
        .iter()
        .map(|(e, t0)| (e.len() - t0).min(config.overshoot_length))
        .max()
        .unwrap_or(0);
    let explore = epsilon_exploration(config.epsilon, n_a);

    let mut start_states = Vec::with_capacity(b);
    let mut first_actions = Vec::with_capacity(b);
    let mut root_targets = Array2::zeros((b, n_a));
    let mut update_intents = vec![vec![0; b]; unroll];
    let mut update_actions = vec![vec![0; b]; unroll];
    let mut reward_targets = vec![vec![0.0; b]; unroll];
    let mut value_targets = vec![vec![0.0; b]; unroll];
    let mut step_mask = vec![vec![0.0; b]; unroll];
    let mut intent_targets = vec![Array2::zeros((b, n_z)); unroll];
    // (row, step, bootstrap index into the episode)
    let mut boots: Vec<(usize, usize, Rc<Episode>, usize)> = Vec::new();

    for (i, (e, t0)) in windows.iter().enumerate() {
        let len = e.len();
        let k_max = (len - t0).min(config.overshoot_length);
        start_states.push(e.states[*t0].clone());
        first_actions.push(e.actions[*t0]);
        for (z, m) in e.intent_dists[*t0].iter().enumerate() {
            for a in 0..n_a {
                root_targets[[i, a]] += m * explore[z][a];
            }
        }
        for k in 0..k_max {
            let t = t0 + k + 1;
            step_mask[k][i] = 1.0;
            reward_targets[k][i] = e.rewards[t - 1];
            let end = (t + config.nstep_length).min(len);
            let mut g = 0.0;
            let mut disc = 1.0;
            for r in &e.rewards[t..end] {
                g += disc * r;
                disc *= config.discount;
            }
            value_targets[k][i] = g;
            if t + config.nstep_length < len {
                boots.push((i, k, Rc::clone(e), t + config.nstep_length));
            }
            if t < len {
                for (z, m) in e.intent_dists[t].iter().enumerate() {
                    intent_targets[k][[i, z]] = *m;
                }
                if k + 1 < k_max {
                    update_actions[k][i] = e.actions[t];
                    update_intents[k][i] = resample_at(&e.intent_dists[t], e.actions[t], n_a, config.epsilon, t, rng)?;
                }
            }
        }
    }

    if !boots.is_empty() {
        let states = Rc::new(boots.iter().map(|(_, _, e, t)| e.states[*t].clone()).collect());
        let actions: Vec<usize> = boots.iter().map(|(_, _, e, t)| e.actions[*t]).collect();
        let q = model.q_values(states, &actions, config.discount);
        let tail = config.discount.powi(config.nstep_length as i32);
        for ((i, k, _, _), q) in boots.iter().zip(q) {
            value_targets[*k][*i] += tail * q;
        }
    }

    Ok(Batch {
        size: b,
        unroll,
        start_states: Rc::new(start_states),
        first_actions,
        update_intents,
        update_actions,
        reward_targets,
        value_targets,
        step_mask,
        intent_targets,
        root_targets,
    })
}

/// Builds the loss graph for a batch and returns the root variable with the
/// per-term values.
pub fn loss_graph(
    tape: &mut Tape,
    model: &LearnedPartialModel,
    batch: &Batch,
    config: &TrainConfig,
    mask: LossMask,
) -> (Var, LossReport) {
    let inv_b = 1.0 / batch.size as f64;
    let mut terms: Vec<Var> = Vec::new();
    let mut report = LossReport::default();

    let mut h = model.initial(tape, Rc::clone(&batch.start_states), &batch.first_actions);
    for k in 0..batch.unroll {
        let heads = model.heads(tape, h);
        let step = &batch.step_mask[k];
        if mask.reward {
            let (v, value) = squared_error(tape, heads.reward, &batch.reward_targets[k], step, 0.5 * config.c_reward * inv_b);
            terms.push(v);
            report.reward += value / config.c_reward.max(f64::MIN_POSITIVE);
        }
        if mask.value {
            let (v, value) = squared_error(tape, heads.value, &batch.value_targets[k], step, 0.5 * config.c_value * inv_b);
            terms.push(v);
            report.value += value / config.c_value.max(f64::MIN_POSITIVE);
        }
        if mask.intent {
            let target = &batch.intent_targets[k];
            let logp = tape.log_softmax(heads.intent_logits);
            let weights = target.mapv(|m| -m * config.c_policy * inv_b);
            let ce = tape.mul_const(logp, weights);
            let ce = tape.sum(ce);
            // Adding the target entropy turns cross-entropy into the exact KL.
            let neg_entropy: f64 = target.iter().filter(|m| **m > 0.0).map(|m| m * m.ln()).sum::<f64>() * inv_b;
            let kl = tape.add_scalar(ce, config.c_policy * neg_entropy);
            report.intent_kl += tape.scalar(kl) / config.c_policy.max(f64::MIN_POSITIVE);
            terms.push(kl);
        }
        if k + 1 < batch.unroll {
            h = model.update(tape, h, &batch.update_intents[k], &batch.update_actions[k]);
        }
    }
    if mask.root {
        let logits = model.root_logits(tape, Rc::clone(&batch.start_states));
        let logp = tape.log_softmax(logits);
        let ce = tape.mul_const(logp, batch.root_targets.mapv(|m| -m * inv_b));
        let ce = tape.sum(ce);
        report.root = tape.scalar(ce);
        terms.push(ce);
    }

    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t);
    }
    report.total = tape.scalar(total);
    (total, report)
}

fn squared_error(tape: &mut Tape, pred: Var, target: &[f64], mask: &[f64], weight: f64) -> (Var, f64) {
    let t = tape.constant(column(target));
    let d = tape.sub(pred, t);
    let sq = tape.square(d);
    let w = column(&mask.iter().map(|m| m * weight).collect::<Vec<_>>());
    let l = tape.mul_const(sq, w);
    let l = tape.sum(l);
    (l, tape.scalar(l))
}

/// Loss and gradients for one batch.
pub fn loss_and_gradients(
    model: &LearnedPartialModel,
    batch: &Batch,
    config: &TrainConfig,
    mask: LossMask,
) -> (LossReport, Gradients) {
    let mut tape = Tape::new(model.params());
    let (root, report) = loss_graph(&mut tape, model, batch, config, mask);
    (report, tape.backward(root))
}

/// Single-threaded learner over a replay buffer.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: LearnedPartialModel,
    pub config: TrainConfig,
    pub replay: Replay,
    optimiser: Adam,
    rng: ChaCha8Rng,
    steps: usize,
}

impl Trainer {
    pub fn new(model: LearnedPartialModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimiser = Adam::new(config.adam(), model.params());
        let replay = Replay::new(config.replay_capacity, config.replays_per_trajectory);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { model, config, replay, optimiser, rng, steps: 0 })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self) -> Result<LossReport> {
        let windows = self.replay.sample(self.config.batch_size, &mut self.rng)?;
        let batch = build_batch(&windows, &self.model, &self.config, &mut self.rng)?;
        let (report, grads) = loss_and_gradients(&self.model, &batch, &self.config, LossMask::ALL);
        if !report.total.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "non-finite loss at step {}; the data may violate the support assumption",
                self.steps
            )));
        }
        if let Some(end) = self.config.final_learning_rate {
            let frac = (self.steps as f64 / self.config.num_steps.max(1) as f64).min(1.0);
            self.optimiser.config.learning_rate = self.config.learning_rate + frac * (end - self.config.learning_rate);
        }
        self.optimiser.step(self.model.params_mut(), &grads);
        self.steps += 1;
        Ok(report)
    }

    /// Runs `n` steps and returns the loss curve.
    pub fn train(&mut self, n: usize) -> Result<Vec<LossReport>> {
        (0..n).map(|_| self.step()).collect()
    }
}

/// Trains a model on a fixed data set for `config.num_steps` steps.
pub fn train(
    model: LearnedPartialModel,
    episodes: impl IntoIterator<Item = Episode>,
    config: &TrainConfig,
) -> Result<(LearnedPartialModel, Vec<LossReport>)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.replay.extend(episodes);
    let curve = trainer.train(config.num_steps)?;
    Ok((trainer.model, curve))
}

/// Checks that every stored intent distribution is a valid distribution.
pub fn check_episode(e: &Episode, num_intents: usize) -> Result<()> {
    if e.states.len() != e.len() + 1 || e.intents.len() != e.len() || e.intent_dists.len() != e.len() || e.rewards.len() != e.len() {
        return Err(Error::InvalidParameter("episode fields have inconsistent lengths".into()));
    }
    for (t, m) in e.intent_dists.iter().enumerate() {
        let sum: f64 = m.iter().sum();
        if m.len() != num_intents || (sum - 1.0).abs() > 1e-9 + ROW_TOL || m.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidParameter(format!("invalid intent distribution at step {t}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelKind};

    #[test]
    fn posterior_matches_hand_computation() {
        let p = intent_posterior(&[0.5, 0.5], 0, 2, 0.01).unwrap();
        assert!((p[0] - 0.995).abs() < 1e-12 && (p[1] - 0.005).abs() < 1e-12);
        let p = intent_posterior(&[0.3, 0.7], 1, 2, 1.0).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-12);
        assert!(intent_posterior(&[1.0, 0.0], 1, 2, 1e-300).is_some());
    }

    #[test]
    fn replay_evicts_oldest_and_covers_all_windows() {
        let ep = |r: f64| Episode {
            states: vec![vec![0]; 3],
            actions: vec![0, 1],
            intents: vec![0, 1],
            intent_dists: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            rewards: vec![r, r],
        };
        let mut replay = Replay::new(4, 2);
        replay.extend([ep(1.0), ep(2.0), ep(3.0)]);
        assert_eq!(replay.num_episodes(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = replay.sample(8, &mut rng).unwrap();
        assert!(got.iter().all(|(e, _)| e.rewards[0] > 1.5));
        assert_eq!(got.iter().filter(|(_, t)| *t == 0).count(), 4);
    }

    #[test]
    fn batch_targets_for_a_three_step_episode() {
        let e = Rc::new(Episode {
            states: vec![vec![0], vec![1], vec![2], vec![3]],
            actions: vec![0, 1, 0],
            intents: vec![0, 1, 0],
            intent_dists: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
            rewards: vec![1.0, 2.0, 4.0],
        });
        let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Cpm, 4, 2), 0);
        let config = TrainConfig { discount: 0.5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = build_batch(&[(Rc::clone(&e), 0), (e, 2)], &model, &config, &mut rng).unwrap();
        assert_eq!(b.unroll, 3);
        assert_eq!(b.reward_targets[0], vec![1.0, 4.0]);
        assert_eq!(b.value_targets[0], vec![2.0 + 0.5 * 4.0, 0.0]);
        assert_eq!(b.step_mask[1], vec![1.0, 0.0]);
        assert_eq!(b.intent_targets[0].row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(b.intent_targets[2].row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(b.update_actions[0][0], 1);
        assert!((b.root_targets[[0, 0]] - 0.995).abs() < 1e-12);
    }
}
