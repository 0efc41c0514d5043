//! Finite-horizon tabular MDPs, factored behaviour policies and exact
//! backward-induction evaluation.
//!
//! Values are undiscounted sums over `horizon` action steps. Terminal states
//! self-loop with zero reward, so every episode has exactly `horizon` steps.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{self, check_table, sample_categorical, sample_simplex};
use crate::error::{Error, Result};

/// Serialized layout of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    states: usize,
    actions: usize,
    horizon: usize,
    start: usize,
    #[serde(rename = "P")]
    transitions: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    rewards: Vec<Vec<f64>>,
    terminal: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    start_state: usize,
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<f64>>,
    terminal: Vec<bool>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let mdp = TabularMdp::new(doc.start, doc.horizon, doc.transitions, doc.rewards, doc.terminal)?;
        if mdp.num_states != doc.states || mdp.num_actions != doc.actions {
            return Err(Error::DimensionMismatch(format!(
                "declared {}x{} but tables are {}x{}",
                doc.states, doc.actions, mdp.num_states, mdp.num_actions
            )));
        }
        Ok(mdp)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        MdpDocument {
            states: m.num_states,
            actions: m.num_actions,
            horizon: m.horizon,
            start: m.start_state,
            transitions: m.transitions,
            rewards: m.rewards,
            terminal: m.terminal,
        }
    }
}

impl TabularMdp {
    /// Validates and builds an MDP. `transitions[s][a]` is the next-state
    /// distribution, `rewards[s][a]` the expected immediate reward.
    pub fn new(
        start_state: usize,
        horizon: usize,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let num_states = transitions.len();
        if num_states == 0 {
            return Err(Error::InvalidParameter("MDP needs at least one state".into()));
        }
        let num_actions = transitions[0].len();
        if num_actions == 0 {
            return Err(Error::InvalidParameter("MDP needs at least one action".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if start_state >= num_states {
            return Err(Error::InvalidParameter(format!(
                "start state {start_state} out of range ({num_states} states)"
            )));
        }
        if rewards.len() != num_states || terminal.len() != num_states {
            return Err(Error::DimensionMismatch(
                "rewards/terminal must have one row per state".into(),
            ));
        }
        for (s, rows) in transitions.iter().enumerate() {
            if rows.len() != num_actions || rewards[s].len() != num_actions {
                return Err(Error::DimensionMismatch(format!(
                    "state {s} does not have {num_actions} actions"
                )));
            }
            check_table(rows, num_states, &format!("P[{s}]"))?;
            if rewards[s].iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite reward at state {s}")));
            }
            if terminal[s] {
                for a in 0..num_actions {
                    if rows[a][s] != 1.0 || rewards[s][a] != 0.0 {
                        return Err(Error::InvalidParameter(format!(
                            "terminal state {s} must self-loop with zero reward"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            start_state,
            transitions,
            rewards,
            terminal,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[s][a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    /// Same dynamics, different start state and horizon.
    pub fn with_start(&self, start_state: usize, horizon: usize) -> Result<Self> {
        TabularMdp::new(
            start_state,
            horizon,
            self.transitions.clone(),
            self.rewards.clone(),
            self.terminal.clone(),
        )
    }

    /// Distribution over the next state when the current state is distributed
    /// as `belief` and action `a` is applied in every state.
    pub fn propagate(&self, belief: &[f64], a: usize) -> Vec<f64> {
        let mut next = vec![0.0; self.num_states];
        for (s, &b) in belief.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (s2, &p) in self.transitions[s][a].iter().enumerate() {
                next[s2] += b * p;
            }
        }
        next
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(&self.transitions[s][a], rng)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Behaviour policy factored through an intent: `z ~ m(z|s)`, `a ~ pi(a|z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredPolicy {
    intent: Vec<Vec<f64>>,
    exploration: Vec<Vec<f64>>,
}

impl FactoredPolicy {
    pub fn new(intent: Vec<Vec<f64>>, exploration: Vec<Vec<f64>>) -> Result<Self> {
        let num_intents = exploration.len();
        if intent.is_empty() || num_intents == 0 {
            return Err(Error::InvalidParameter("empty policy tables".into()));
        }
        let num_actions = exploration[0].len();
        check_table(&intent, num_intents, "m(z|s)")?;
        check_table(&exploration, num_actions, "pi(a|z)")?;
        Ok(Self { intent, exploration })
    }

    /// A single-table policy `pi(a|s)` written as `m = pi`, `pi(a|z) = delta`.
    pub fn from_marginal(table: Vec<Vec<f64>>) -> Result<Self> {
        let n = table.first().map_or(0, Vec::len);
        Self::new(table, identity(n))
    }

    pub fn num_states(&self) -> usize {
        self.intent.len()
    }

    pub fn num_intents(&self) -> usize {
        self.exploration.len()
    }

    pub fn num_actions(&self) -> usize {
        self.exploration[0].len()
    }

    /// `m(.|s)`
    pub fn intent(&self, s: usize) -> &[f64] {
        &self.intent[s]
    }

    pub fn intent_table(&self) -> &[Vec<f64>] {
        &self.intent
    }

    /// `pi(.|z)`
    pub fn exploration(&self, z: usize) -> &[f64] {
        &self.exploration[z]
    }

    /// `pi(a|s) = sum_z m(z|s) pi(a|z)`
    pub fn marginal(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions()];
        for (z, &mz) in self.intent[s].iter().enumerate() {
            for (a, &pa) in self.exploration[z].iter().enumerate() {
                out[a] += mz * pa;
            }
        }
        out
    }

    pub fn marginal_table(&self) -> Vec<Vec<f64>> {
        (0..self.num_states()).map(|s| self.marginal(s)).collect()
    }

    /// Posterior over the intent after seeing the executed action:
    /// `p(z|s,a) ∝ m(z|s) pi(a|z)`. `None` when the action has zero probability.
    pub fn intent_posterior(&self, s: usize, a: usize) -> Option<Vec<f64>> {
        let mut post: Vec<f64> = self.intent[s]
            .iter()
            .zip(&self.exploration)
            .map(|(m, row)| m * row[a])
            .collect();
        (dist::normalize(&mut post) > 0.0).then_some(post)
    }

    pub fn check_dims(&self, mdp: &TabularMdp) -> Result<()> {
        if self.num_states() != mdp.num_states() || self.num_actions() != mdp.num_actions() {
            return Err(Error::DimensionMismatch(format!(
                "policy is {}x{} (states x actions), MDP is {}x{}",
                self.num_states(),
                self.num_actions(),
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| dist::one_hot(n, i)).collect()
}

/// `pi(a|z) = (1 - eps) delta(z, a) + eps / n_a` on top of the given intent table.
/// The intent space is the action space.
pub fn epsilon_factored(base: Vec<Vec<f64>>, epsilon: f64, num_actions: usize) -> Result<FactoredPolicy> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside [0,1]")));
    }
    FactoredPolicy::new(base, epsilon_exploration(epsilon, num_actions))
}

pub fn epsilon_exploration(epsilon: f64, num_actions: usize) -> Vec<Vec<f64>> {
    let floor = epsilon / num_actions as f64;
    (0..num_actions)
        .map(|z| {
            (0..num_actions)
                .map(|a| if a == z { 1.0 - epsilon + floor } else { floor })
                .collect()
        })
        .collect()
}

/// One step of a trajectory. `intent_dist` is the `m(.|s_t)` row that `z` was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub z: usize,
    pub a: usize,
    pub reward: f64,
    pub next_state: usize,
    pub intent_dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_state: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    /// `s_t` for `t = 0..=len`.
    pub fn state(&self, t: usize) -> usize {
        if t == 0 {
            self.start_state
        } else {
            self.steps[t - 1].next_state
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

pub fn write_trajectories_jsonl<W: Write>(mut out: W, trajectories: &[Trajectory]) -> Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories_jsonl<R: BufRead>(input: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// `values[k][s]`: value of state `s` with `k` steps remaining.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<Vec<f64>>,
}

impl ValueFunction {
    pub fn get(&self, s: usize, steps_remaining: usize) -> f64 {
        self.values[steps_remaining][s]
    }
}

/// Greedy actions indexed `[steps_remaining][state]`; row 0 is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPolicy {
    pub actions: Vec<Vec<usize>>,
}

impl GreedyPolicy {
    pub fn action(&self, s: usize, steps_remaining: usize) -> usize {
        self.actions[steps_remaining][s]
    }
}

/// Backward induction of a single-table (marginal) policy, returning the full
/// value table.
pub fn evaluate_marginal(mdp: &TabularMdp, table: &[Vec<f64>]) -> Result<ValueFunction> {
    if table.len() != mdp.num_states() {
        return Err(Error::DimensionMismatch(format!(
            "policy has {} rows, MDP has {} states",
            table.len(),
            mdp.num_states()
        )));
    }
    check_table(table, mdp.num_actions(), "pi(a|s)")?;
    let ns = mdp.num_states();
    let mut values = vec![vec![0.0; ns]];
    for k in 1..=mdp.horizon() {
        let prev = &values[k - 1];
        let row: Vec<f64> = (0..ns)
            .map(|s| {
                if mdp.is_terminal(s) {
                    return 0.0;
                }
                table[s]
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(a, p)| p * (mdp.reward(s, a) + dist::dot(mdp.transition(s, a), prev)))
                    .sum()
            })
            .collect();
        values.push(row);
    }
    Ok(ValueFunction { values })
}

/// Exact value of the behaviour policy from the start state.
pub fn policy_value(mdp: &TabularMdp, policy: &FactoredPolicy) -> Result<f64> {
    policy.check_dims(mdp)?;
    let vf = evaluate_marginal(mdp, &policy.marginal_table())?;
    Ok(vf.get(mdp.start_state(), mdp.horizon()))
}

/// Finite-horizon value iteration. Ties go to the lowest action index.
pub fn optimal_value(mdp: &TabularMdp) -> (ValueFunction, GreedyPolicy) {
    let ns = mdp.num_states();
    let mut values = vec![vec![0.0; ns]];
    let mut actions = vec![vec![0; ns]];
    for k in 1..=mdp.horizon() {
        let prev = &values[k - 1];
        let mut row = vec![0.0; ns];
        let mut arow = vec![0; ns];
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            let q: Vec<f64> = (0..mdp.num_actions())
                .map(|a| mdp.reward(s, a) + dist::dot(mdp.transition(s, a), prev))
                .collect();
            let best = dist::argmax(&q);
            row[s] = q[best];
            arow[s] = best;
        }
        values.push(row);
        actions.push(arow);
    }
    (ValueFunction { values }, GreedyPolicy { actions })
}

/// Samples `n` episodes of exactly `horizon` steps.
pub fn sample_trajectories(mdp: &TabularMdp, policy: &FactoredPolicy, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    policy.check_dims(mdp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sample_episode(mdp, policy, mdp.start_state(), &mut rng)).collect())
}

pub fn sample_episode<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &FactoredPolicy, start: usize, rng: &mut R) -> Trajectory {
    let mut s = start;
    let mut steps = Vec::with_capacity(mdp.horizon());
    for _ in 0..mdp.horizon() {
        let intent = policy.intent(s);
        let z = sample_categorical(intent, rng);
        let a = sample_categorical(policy.exploration(z), rng);
        let next = mdp.sample_next(s, a, rng);
        steps.push(Step {
            z,
            a,
            reward: mdp.reward(s, a),
            next_state: next,
            intent_dist: intent.to_vec(),
        });
        s = next;
    }
    Trajectory { start_state: start, steps }
}

/// `n` policies with intent rows drawn uniformly from the simplex, explored
/// with `epsilon` on top.
pub fn random_policies(mdp: &TabularMdp, n: usize, epsilon: f64, seed: u64) -> Result<Vec<FactoredPolicy>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one policy".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let intent = (0..mdp.num_states())
                .map(|_| sample_simplex(mdp.num_actions(), &mut rng))
                .collect();
            epsilon_factored(intent, epsilon, mdp.num_actions())
        })
        .collect()
}

/// Random MDP for property tests: Dirichlet(1) transitions, rewards in
/// [-1, 1], no terminal states.
pub fn random_mdp(num_states: usize, num_actions: usize, horizon: usize, seed: u64) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions = (0..num_states)
        .map(|_| (0..num_actions).map(|_| sample_simplex(num_states, &mut rng)).collect())
        .collect();
    let rewards = (0..num_states)
        .map(|_| (0..num_actions).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    TabularMdp::new(0, horizon, transitions, rewards, vec![false; num_states])
        .expect("random MDP is valid by construction")
}

/// Random MDP whose transitions are all point masses.
pub fn random_deterministic_mdp(num_states: usize, num_actions: usize, horizon: usize, seed: u64) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions = (0..num_states)
        .map(|_| {
            (0..num_actions)
                .map(|_| dist::one_hot(num_states, rng.random_range(0..num_states)))
                .collect()
        })
        .collect();
    let rewards = (0..num_states)
        .map(|_| (0..num_actions).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    TabularMdp::new(0, horizon, transitions, rewards, vec![false; num_states])
        .expect("random MDP is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bears;

    #[test]
    fn rejects_unnormalised_rows() {
        let err = TabularMdp::new(0, 1, vec![vec![vec![0.5, 0.4]]; 2], vec![vec![0.0]; 2], vec![false; 2]);
        assert!(matches!(err, Err(Error::InvalidDistribution { .. })));
    }

    #[test]
    fn rejects_terminal_with_reward() {
        let err = TabularMdp::new(0, 1, vec![vec![vec![1.0]]], vec![vec![1.0]], vec![true]);
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn epsilon_table_matches_formula() {
        let p = epsilon_factored(identity(2), 0.01, 2).unwrap();
        assert_eq!(p.exploration(0), &[0.995, 0.005]);
        assert_eq!(p.exploration(1), &[0.005, 0.995]);
        let p = epsilon_factored(identity(2), 0.0, 2).unwrap();
        assert_eq!(p.exploration(0), &[1.0, 0.0]);
        let p = epsilon_factored(identity(2), 1.0, 2).unwrap();
        assert_eq!(p.exploration(1), &[0.5, 0.5]);
        assert!(epsilon_factored(identity(2), 1.5, 2).is_err());
    }

    #[test]
    fn chain_value_is_sum_of_path_rewards() {
        // 0 -> 1 -> 2 -> 2, single action, rewards 1, 2, 0.
        let t = vec![
            vec![vec![0.0, 1.0, 0.0]],
            vec![vec![0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0, 1.0]],
        ];
        let r = vec![vec![1.0], vec![2.0], vec![0.0]];
        let mdp = TabularMdp::new(0, 3, t, r, vec![false, false, true]).unwrap();
        let (vf, _) = optimal_value(&mdp);
        assert_eq!(vf.get(0, 3), 3.0);
    }

    #[test]
    fn uniform_policy_on_fuzzy_bear() {
        let mdp = bears::fuzzy_bear(0.5).unwrap();
        let uniform = FactoredPolicy::from_marginal(vec![vec![0.5, 0.5]; 4]).unwrap();
        // Enumerate: forest, then hug/run each with 1/2 in teddy/grizzly.
        let brute = 0.5 * (0.5 * 1.0 + 0.5 * 0.0) + 0.5 * (0.5 * -0.5 + 0.5 * 0.0);
        assert!((policy_value(&mdp, &uniform).unwrap() - brute).abs() < 1e-15);
        assert!((brute - 0.125).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mdp = bears::fuzzy_bear(0.5).unwrap();
        let p = FactoredPolicy::from_marginal(vec![vec![1.0, 0.0]; 3]).unwrap();
        assert!(matches!(policy_value(&mdp, &p), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn intent_posterior_matches_hand_computation() {
        let p = epsilon_factored(vec![vec![0.5, 0.5]], 0.01, 2).unwrap();
        let post = p.intent_posterior(0, 0).unwrap();
        assert!((post[0] - 0.995).abs() < 1e-15 && (post[1] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_schema() {
        let mdp = bears::avoid_fuzzy_bear(0.3).unwrap();
        let text = mdp.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["states", "actions", "horizon", "start", "P", "R", "terminal"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(TabularMdp::from_json(&text).unwrap(), mdp);
        let bad = text.replace("\"horizon\": 2", "\"horizon\": 0");
        assert!(TabularMdp::from_json(&bad).is_err());
    }

    #[test]
    fn trajectories_round_trip_jsonl() {
        let mdp = bears::fuzzy_bear(0.5).unwrap();
        let pol = epsilon_factored(bears::optimal_intent(&mdp), 0.1, 2).unwrap();
        let trajs = sample_trajectories(&mdp, &pol, 5, 1).unwrap();
        let mut buf = Vec::new();
        write_trajectories_jsonl(&mut buf, &trajs).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 5);
        let back = read_trajectories_jsonl(&buf[..]).unwrap();
        assert_eq!(back, trajs);
    }
}
