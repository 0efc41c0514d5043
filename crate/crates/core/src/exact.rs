//! Converged partial models computed exactly from a known MDP and behaviour
//! policy, and their optimal planning values.
//!
//! The non-causal model (NCPM) conditions only on actions, so its belief over
//! the hidden state after `a_0..a_i` is `S_ii ∝ S_i,i-1 · pi(a_i|s_i)` and the
//! behaviour policy leaks into its predictions. The causal model (CPM) also
//! conditions on the intent `z_i ~ m(z|s_i)` that preceded each action; given
//! `z_i` the action carries no information about `s_i`, so its belief is
//! `Z_i+1 = sum_s p(s|Z_i, z_i) P(.|s, a_i)` and never involves `pi(a|z)`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dist;
use crate::error::{Error, Result};
use crate::mdp::{epsilon_factored, random_policies, FactoredPolicy, TabularMdp};

/// Conditions a state belief on the observed action. Returns `None` when the
/// action has zero probability under the belief.
pub fn condition_on_action(belief: &[f64], marginal: &[Vec<f64>], a: usize) -> Option<Vec<f64>> {
    let mut post: Vec<f64> = belief.iter().enumerate().map(|(s, b)| b * marginal[s][a]).collect();
    (dist::normalize(&mut post) > 0.0).then_some(post)
}

/// `p(z | belief) = sum_s belief(s) m(z|s)`
pub fn intent_distribution(belief: &[f64], policy: &FactoredPolicy) -> Vec<f64> {
    let mut out = vec![0.0; policy.num_intents()];
    for (s, &b) in belief.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (z, &m) in policy.intent(s).iter().enumerate() {
            out[z] += b * m;
        }
    }
    out
}

/// `p(s | belief, z) ∝ belief(s) m(z|s)`
pub fn condition_on_intent(belief: &[f64], policy: &FactoredPolicy, z: usize) -> Option<Vec<f64>> {
    let mut post: Vec<f64> = belief.iter().enumerate().map(|(s, b)| b * policy.intent(s)[z]).collect();
    (dist::normalize(&mut post) > 0.0).then_some(post)
}

pub fn expected_reward(mdp: &TabularMdp, belief: &[f64], a: usize) -> f64 {
    belief.iter().enumerate().map(|(s, b)| b * mdp.reward(s, a)).sum()
}

fn start_belief(mdp: &TabularMdp) -> Vec<f64> {
    dist::one_hot(mdp.num_states(), mdp.start_state())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcpmEntry {
    /// `S_i,i-1 = p(s_i | s_0, a_0..a_i-1)`
    pub prior: Vec<f64>,
    /// `S_ii = p(s_i | s_0, a_0..a_i)`
    pub posterior: Vec<f64>,
    /// `E[r_i+1 | s_0, a_0..a_i]`
    pub expected_reward: f64,
}

/// Tables keyed by the action history `a_0..a_i`; only reachable histories
/// are present.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcpmExact {
    pub entries: BTreeMap<Vec<usize>, NcpmEntry>,
}

impl NcpmExact {
    pub fn entry(&self, actions: &[usize]) -> Result<&NcpmEntry> {
        self.entries
            .get(actions)
            .ok_or_else(|| Error::UnreachableHistory(actions.to_vec()))
    }
}

pub fn ncpm_build(mdp: &TabularMdp, policy: &FactoredPolicy) -> Result<NcpmExact> {
    policy.check_dims(mdp)?;
    let marginal = policy.marginal_table();
    let mut entries = BTreeMap::new();
    let mut frontier = vec![(Vec::new(), start_belief(mdp))];
    for _ in 0..mdp.horizon() {
        let mut next_frontier = Vec::new();
        for (history, prior) in frontier {
            for a in 0..mdp.num_actions() {
                let Some(posterior) = condition_on_action(&prior, &marginal, a) else {
                    continue;
                };
                let mut key = history.clone();
                key.push(a);
                let next = mdp.propagate(&posterior, a);
                entries.insert(
                    key.clone(),
                    NcpmEntry {
                        prior: prior.clone(),
                        expected_reward: expected_reward(mdp, &posterior, a),
                        posterior,
                    },
                );
                next_frontier.push((key, next));
            }
        }
        frontier = next_frontier;
    }
    Ok(NcpmExact { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcpmSolution {
    pub value: f64,
    /// Open-loop argmax sequence (lowest index on ties).
    pub actions: Vec<usize>,
}

/// `max_{a_0..a_H-1} sum_i E[r_i+1 | s_0, a_0..a_i]` over reachable histories.
pub fn ncpm_solve(mdp: &TabularMdp, policy: &FactoredPolicy) -> Result<NcpmSolution> {
    policy.check_dims(mdp)?;
    let marginal = policy.marginal_table();
    let (value, actions) = ncpm_search(mdp, &marginal, &start_belief(mdp), mdp.horizon());
    Ok(NcpmSolution { value, actions })
}

fn ncpm_search(mdp: &TabularMdp, marginal: &[Vec<f64>], prior: &[f64], remaining: usize) -> (f64, Vec<usize>) {
    if remaining == 0 {
        return (0.0, Vec::new());
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for a in 0..mdp.num_actions() {
        let Some(post) = condition_on_action(prior, marginal, a) else {
            continue;
        };
        let (rest, mut tail) = ncpm_search(mdp, marginal, &mdp.propagate(&post, a), remaining - 1);
        let q = expected_reward(mdp, &post, a) + rest;
        if best.as_ref().is_none_or(|(v, _)| q > *v) {
            tail.insert(0, a);
            best = Some((q, tail));
        }
    }
    best.expect("some action always has positive probability")
}

pub fn ncpm_optimal_value(mdp: &TabularMdp, policy: &FactoredPolicy) -> Result<f64> {
    Ok(ncpm_solve(mdp, policy)?.value)
}

/// Expected cumulative reward of the action sequence under the confounded
/// conditional the NCPM learns.
pub fn observational_value(mdp: &TabularMdp, policy: &FactoredPolicy, actions: &[usize]) -> Result<f64> {
    policy.check_dims(mdp)?;
    check_sequence(mdp, actions)?;
    let marginal = policy.marginal_table();
    let mut belief = start_belief(mdp);
    let mut total = 0.0;
    for (i, &a) in actions.iter().enumerate() {
        let post = condition_on_action(&belief, &marginal, a)
            .ok_or_else(|| Error::UnreachableHistory(actions[..=i].to_vec()))?;
        total += expected_reward(mdp, &post, a);
        belief = mdp.propagate(&post, a);
    }
    Ok(total)
}

/// Expected cumulative reward when the actions are imposed regardless of state.
pub fn interventional_value(mdp: &TabularMdp, actions: &[usize]) -> Result<f64> {
    check_sequence(mdp, actions)?;
    let mut belief = start_belief(mdp);
    let mut total = 0.0;
    for &a in actions {
        total += expected_reward(mdp, &belief, a);
        belief = mdp.propagate(&belief, a);
    }
    Ok(total)
}

fn check_sequence(mdp: &TabularMdp, actions: &[usize]) -> Result<()> {
    if actions.len() > mdp.horizon() {
        return Err(Error::InvalidParameter(format!(
            "sequence of {} actions exceeds horizon {}",
            actions.len(),
            mdp.horizon()
        )));
    }
    if let Some(a) = actions.iter().find(|a| **a >= mdp.num_actions()) {
        return Err(Error::InvalidParameter(format!("action {a} out of range")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpmEntry {
    /// `p(s_i | history up to z_i)`
    pub posterior: Vec<f64>,
    /// `E[r_i+1 | history, a_i]`
    pub expected_reward: f64,
}

/// Tables keyed by interleaved histories.
///
/// `intents` maps `[a_0, z_1, a_1, .., a_i-1]` to `Z_i` and `p(z_i | ..)`;
/// `entries` maps `[a_0, z_1, a_1, .., z_i, a_i]` to the reward prediction.
/// Histories containing a zero-probability intent are absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpmExact {
    pub beliefs: BTreeMap<Vec<usize>, Vec<f64>>,
    pub intents: BTreeMap<Vec<usize>, Vec<f64>>,
    pub entries: BTreeMap<Vec<usize>, CpmEntry>,
}

impl CpmExact {
    pub fn entry(&self, history: &[usize]) -> Result<&CpmEntry> {
        self.entries
            .get(history)
            .ok_or_else(|| Error::UnreachableHistory(history.to_vec()))
    }

    pub fn intent(&self, history: &[usize]) -> Result<&[f64]> {
        self.intents
            .get(history)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnreachableHistory(history.to_vec()))
    }
}

pub fn cpm_build(mdp: &TabularMdp, policy: &FactoredPolicy) -> Result<CpmExact> {
    policy.check_dims(mdp)?;
    let mut out = CpmExact {
        beliefs: BTreeMap::new(),
        intents: BTreeMap::new(),
        entries: BTreeMap::new(),
    };
    // Step 0: the start state is observed, no intent is needed.
    let s0 = start_belief(mdp);
    let mut frontier = Vec::new();
    for a in 0..mdp.num_actions() {
        out.entries.insert(
            vec![a],
            CpmEntry { posterior: s0.clone(), expected_reward: expected_reward(mdp, &s0, a) },
        );
        frontier.push((vec![a], mdp.propagate(&s0, a)));
    }
    for _ in 1..mdp.horizon() {
        let mut next_frontier = Vec::new();
        for (history, belief) in frontier {
            out.intents.insert(history.clone(), intent_distribution(&belief, policy));
            out.beliefs.insert(history.clone(), belief.clone());
            for z in 0..policy.num_intents() {
                let Some(post) = condition_on_intent(&belief, policy, z) else {
                    continue;
                };
                for a in 0..mdp.num_actions() {
                    let mut key = history.clone();
                    key.extend([z, a]);
                    next_frontier.push((key.clone(), mdp.propagate(&post, a)));
                    out.entries.insert(
                        key,
                        CpmEntry { posterior: post.clone(), expected_reward: expected_reward(mdp, &post, a) },
                    );
                }
            }
        }
        frontier = next_frontier;
    }
    Ok(out)
}

/// Closed-loop-in-`z` plan: the first action, then one action per intent
/// history `[z_1..z_i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpmSolution {
    pub value: f64,
    pub first_action: usize,
    pub plan: BTreeMap<Vec<usize>, usize>,
}

impl CpmSolution {
    pub fn action_for(&self, intents: &[usize]) -> usize {
        if intents.is_empty() {
            self.first_action
        } else {
            self.plan.get(intents).copied().unwrap_or(0)
        }
    }
}

/// `max_a0 [r + sum_z1 p(z1|.) max_a1 [r + sum_z2 ..]]` over the exact CPM.
pub fn cpm_solve(mdp: &TabularMdp, policy: &FactoredPolicy) -> Result<CpmSolution> {
    policy.check_dims(mdp)?;
    let s0 = start_belief(mdp);
    let mut plan = BTreeMap::new();
    let mut best = (f64::NEG_INFINITY, 0);
    for a in 0..mdp.num_actions() {
        let mut sub = BTreeMap::new();
        let q = expected_reward(mdp, &s0, a)
            + cpm_chance(mdp, policy, &mdp.propagate(&s0, a), mdp.horizon() - 1, &mut Vec::new(), &mut sub);
        if q > best.0 {
            best = (q, a);
            plan = sub;
        }
    }
    Ok(CpmSolution { value: best.0, first_action: best.1, plan })
}

fn cpm_chance(
    mdp: &TabularMdp,
    policy: &FactoredPolicy,
    belief: &[f64],
    remaining: usize,
    intents: &mut Vec<usize>,
    plan: &mut BTreeMap<Vec<usize>, usize>,
) -> f64 {
    if remaining == 0 {
        return 0.0;
    }
    let pz = intent_distribution(belief, policy);
    let mut total = 0.0;
    for (z, &p) in pz.iter().enumerate() {
        let Some(post) = condition_on_intent(belief, policy, z) else {
            continue;
        };
        intents.push(z);
        let mut best: Option<(f64, usize, BTreeMap<Vec<usize>, usize>)> = None;
        for a in 0..mdp.num_actions() {
            let mut sub = BTreeMap::new();
            let q = expected_reward(mdp, &post, a)
                + cpm_chance(mdp, policy, &mdp.propagate(&post, a), remaining - 1, intents, &mut sub);
            if best.as_ref().is_none_or(|(v, _, _)| q > *v) {
                best = Some((q, a, sub));
            }
        }
        let (q, a, sub) = best.expect("at least one action");
        plan.insert(intents.clone(), a);
        plan.extend(sub);
        intents.pop();
        total += p * q;
    }
    total
}

pub fn cpm_optimal_value(mdp: &TabularMdp, policy: &FactoredPolicy) -> Result<f64> {
    Ok(cpm_solve(mdp, policy)?.value)
}

/// Exact return of executing a CPM plan in the real MDP, where each intent is
/// drawn from the behaviour policy's `m(z|s)` at the true state.
pub fn evaluate_cpm_plan(mdp: &TabularMdp, policy: &FactoredPolicy, plan: &CpmSolution) -> Result<f64> {
    policy.check_dims(mdp)?;
    let s0 = mdp.start_state();
    let a = plan.first_action;
    let mut total = mdp.reward(s0, a);
    for (s, &p) in mdp.transition(s0, a).iter().enumerate() {
        if p > 0.0 {
            total += p * plan_value(mdp, policy, plan, s, mdp.horizon() - 1, &mut Vec::new());
        }
    }
    Ok(total)
}

fn plan_value(
    mdp: &TabularMdp,
    policy: &FactoredPolicy,
    plan: &CpmSolution,
    s: usize,
    remaining: usize,
    intents: &mut Vec<usize>,
) -> f64 {
    if remaining == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (z, &pz) in policy.intent(s).iter().enumerate() {
        if pz == 0.0 {
            continue;
        }
        intents.push(z);
        let a = plan.action_for(intents);
        let mut q = mdp.reward(s, a);
        for (s2, &p) in mdp.transition(s, a).iter().enumerate() {
            if p > 0.0 {
                q += p * plan_value(mdp, policy, plan, s2, remaining - 1, intents);
            }
        }
        intents.pop();
        total += pz * q;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub v_ncpm: f64,
    pub v_cpm: f64,
}

/// Both optimal model values for `epsilon_factored(base_intent, eps)` at every
/// grid point. The grid must lie in `(0, 1]`.
pub fn epsilon_sweep(mdp: &TabularMdp, base_intent: &[Vec<f64>], grid: &[f64]) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&epsilon| {
            if !(epsilon > 0.0 && epsilon <= 1.0) {
                return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside (0,1]")));
            }
            let policy = epsilon_factored(base_intent.to_vec(), epsilon, mdp.num_actions())?;
            Ok(SweepRow {
                epsilon,
                v_ncpm: ncpm_optimal_value(mdp, &policy)?,
                v_cpm: cpm_optimal_value(mdp, &policy)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterRow {
    pub policy_id: usize,
    pub v_env: f64,
    pub v_ncpm: f64,
    pub v_cpm: f64,
}

/// Behaviour value and both optimal model values for `n` random policies.
pub fn scatter_experiment(mdp: &TabularMdp, n: usize, epsilon: f64, seed: u64) -> Result<Vec<ScatterRow>> {
    random_policies(mdp, n, epsilon, seed)?
        .iter()
        .enumerate()
        .map(|(policy_id, p)| {
            Ok(ScatterRow {
                policy_id,
                v_env: crate::mdp::policy_value(mdp, p)?,
                v_ncpm: ncpm_optimal_value(mdp, p)?,
                v_cpm: cpm_optimal_value(mdp, p)?,
            })
        })
        .collect()
}
