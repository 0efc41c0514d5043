//! Monte-Carlo tree search with pUCT action selection and chance nodes over
//! intents.
//!
//! Decision nodes choose actions; each action leads to a chance node holding
//! the model state after that action. Chance nodes branch on `z ~ p(z|h)`;
//! their value is the `p(z|h)`-weighted mean over children, with children
//! that were never visited contributing the predicted value of `h`. A
//! decision node's value averages its own bootstrap with the visit-weighted
//! action values, so one simulation costs one model evaluation.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use cpm_core::dist::sample_categorical;

use super::{PlanningModel, Root};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootNoise {
    pub alpha: f64,
    pub fraction: f64,
}

impl Default for RootNoise {
    fn default() -> Self {
        Self { alpha: 0.3, fraction: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsConfig {
    pub num_simulations: usize,
    pub c1: f64,
    pub c2: f64,
    /// Branch on intents for non-causal models too. Causal models always
    /// branch, since the intent is an input to their update.
    pub chance_nodes: bool,
    pub root_noise: Option<RootNoise>,
    /// Chance outcomes are picked deterministically up to this many intents
    /// and sampled above it.
    pub enumerate_limit: usize,
    /// Maximum number of actions along a simulated path.
    pub max_depth: Option<usize>,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            num_simulations: 50,
            c1: 1.25,
            c2: 19652.0,
            chance_nodes: true,
            root_noise: None,
            enumerate_limit: 8,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MctsResult {
    pub action: usize,
    pub value: f64,
    pub visit_counts: Vec<u32>,
    /// Normalised root visit counts.
    pub policy: Vec<f64>,
    pub q_values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Child {
    Unexpanded,
    Invalid,
    Node(usize),
}

#[derive(Debug, Clone)]
struct Decision<S> {
    /// Model state the actions step from; `None` at the root.
    state: Option<S>,
    z: usize,
    prior: Vec<f64>,
    /// Predicted value of `state`; `None` at the root.
    bootstrap: Option<f64>,
    steps_left: usize,
    depth: usize,
    visits: Vec<u32>,
    children: Vec<Child>,
    value: f64,
}

#[derive(Debug, Clone)]
struct Chance<S> {
    state: S,
    reward: f64,
    predicted_value: f64,
    prior: Vec<f64>,
    probs: Vec<f64>,
    /// Fixed value for terminal or depth-limited nodes.
    leaf: Option<f64>,
    steps_left: usize,
    depth: usize,
    visits: Vec<u32>,
    children: Vec<Option<usize>>,
    value: f64,
}

#[derive(Debug, Clone, Copy)]
struct MinMax {
    min: f64,
    max: f64,
}

impl MinMax {
    fn new() -> Self {
        Self { min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    fn update(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn normalize(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            v
        }
    }
}

/// pUCT scores `Q̄_a + P_a sqrt(1 + N) / (1 + N_a) (c1 + ln((N + c2 + 1) / c2))`
/// where `Q̄` is the normalised action value, zero for unvisited actions.
pub fn puct_scores(prior: &[f64], visits: &[u32], normalized_q: &[Option<f64>], c1: f64, c2: f64) -> Vec<f64> {
    let n: f64 = visits.iter().map(|v| *v as f64).sum();
    let explore = (1.0 + n).sqrt() * (c1 + ((n + c2 + 1.0) / c2).ln());
    prior
        .iter()
        .zip(visits)
        .zip(normalized_q)
        .map(|((p, nv), q)| q.unwrap_or(0.0) + p * explore / (1.0 + *nv as f64))
        .collect()
}

struct Tree<S> {
    decisions: Vec<Decision<S>>,
    chances: Vec<Chance<S>>,
    bounds: MinMax,
    discount: f64,
}

impl<S: Clone> Tree<S> {
    fn q(&self, c: usize) -> f64 {
        let c = &self.chances[c];
        c.reward + self.discount * c.value
    }

    fn refresh_chance(&mut self, c: usize) {
        let node = &self.chances[c];
        let value = match node.leaf {
            Some(v) => v,
            None => node
                .probs
                .iter()
                .zip(&node.children)
                .map(|(p, child)| p * child.map_or(node.predicted_value, |d| self.decisions[d].value))
                .sum(),
        };
        self.chances[c].value = value;
    }

    fn refresh_decision(&mut self, d: usize) {
        let mut weighted = 0.0;
        let mut total = 0.0;
        for a in 0..self.decisions[d].children.len() {
            if let Child::Node(c) = self.decisions[d].children[a] {
                let n = self.decisions[d].visits[a] as f64;
                let q = self.q(c);
                self.bounds.update(q);
                weighted += n * q;
                total += n;
            }
        }
        let node = &mut self.decisions[d];
        node.value = match node.bootstrap {
            Some(b) => (b + weighted) / (1.0 + total),
            None if total > 0.0 => weighted / total,
            None => 0.0,
        };
    }

    fn normalized_q(&self, d: usize) -> Vec<Option<f64>> {
        let node = &self.decisions[d];
        node.children
            .iter()
            .zip(&node.visits)
            .map(|(c, n)| match c {
                Child::Node(c) if *n > 0 => Some(self.bounds.normalize(self.q(*c))),
                _ => None,
            })
            .collect()
    }
}

pub fn mcts<M: PlanningModel, R: Rng + ?Sized>(
    model: &M,
    root: &Root,
    config: &MctsConfig,
    rng: &mut R,
) -> Result<MctsResult> {
    if config.num_simulations == 0 {
        return Err(Error::InvalidParameter("num_simulations must be positive".into()));
    }
    if root.steps_left == 0 {
        return Err(Error::InvalidParameter("no steps left to plan".into()));
    }
    let n_a = model.num_actions();
    let branch = model.is_causal() || config.chance_nodes;
    let mut prior = model.root_prior(root);
    if let Some(noise) = config.root_noise {
        let gamma = Gamma::new(noise.alpha, 1.0)
            .map_err(|e| Error::InvalidParameter(format!("root noise: {e}")))?;
        let draws: Vec<f64> = (0..n_a).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            for (p, d) in prior.iter_mut().zip(draws) {
                *p = (1.0 - noise.fraction) * *p + noise.fraction * d / total;
            }
        }
    }
    let mut tree: Tree<M::State> = Tree {
        decisions: vec![Decision {
            state: None,
            z: 0,
            prior,
            bootstrap: None,
            steps_left: root.steps_left,
            depth: 0,
            visits: vec![0; n_a],
            children: vec![Child::Unexpanded; n_a],
            value: 0.0,
        }],
        chances: Vec::new(),
        bounds: MinMax::new(),
        discount: model.discount(),
    };

    for _ in 0..config.num_simulations {
        // (decision, action, chance, intent taken below the chance node)
        let mut path: Vec<(usize, usize, usize, Option<usize>)> = Vec::new();
        let mut d = 0;
        'descend: loop {
            let (a, c) = loop {
                let node = &tree.decisions[d];
                let normalized = tree.normalized_q(d);
                let scores = puct_scores(&node.prior, &node.visits, &normalized, config.c1, config.c2);
                let mut best: Option<(usize, f64)> = None;
                for (a, s) in scores.iter().enumerate() {
                    if node.children[a] != Child::Invalid && best.is_none_or(|(_, b)| *s > b) {
                        best = Some((a, *s));
                    }
                }
                let Some((a, _)) = best else {
                    break 'descend;
                };
                match node.children[a] {
                    Child::Node(c) => break (a, c),
                    Child::Invalid => unreachable!("filtered above"),
                    Child::Unexpanded => {
                        let next = match &node.state {
                            None => model.initial_state(root, a),
                            Some(h) => model.step(h, node.z, a),
                        };
                        let Some(next) = next else {
                            tree.decisions[d].children[a] = Child::Invalid;
                            continue;
                        };
                        let out = model.predict(&next);
                        let steps_left = node.steps_left - 1;
                        let depth = node.depth + 1;
                        let leaf = if steps_left == 0 {
                            Some(0.0)
                        } else if config.max_depth.is_some_and(|m| depth >= m) {
                            Some(out.value)
                        } else {
                            None
                        };
                        let probs = if branch { model.intent_dist(&next) } else { vec![1.0] };
                        let c = tree.chances.len();
                        tree.chances.push(Chance {
                            state: next,
                            reward: out.reward,
                            predicted_value: out.value,
                            prior: out.prior,
                            visits: vec![0; probs.len()],
                            children: vec![None; probs.len()],
                            probs,
                            leaf,
                            steps_left,
                            depth,
                            value: leaf.unwrap_or(out.value),
                        });
                        tree.decisions[d].children[a] = Child::Node(c);
                        path.push((d, a, c, None));
                        break 'descend;
                    }
                }
            };
            let chance = &tree.chances[c];
            if chance.leaf.is_some() {
                path.push((d, a, c, None));
                break;
            }
            let z = if chance.probs.len() <= config.enumerate_limit {
                let total: f64 = chance.visits.iter().map(|v| *v as f64).sum();
                let mut best: Option<(usize, f64)> = None;
                for (z, p) in chance.probs.iter().enumerate() {
                    if *p <= 0.0 {
                        continue;
                    }
                    let score = p - chance.visits[z] as f64 / (total + 1.0);
                    if best.is_none_or(|(_, b)| score > b) {
                        best = Some((z, score));
                    }
                }
                match best {
                    Some((z, _)) => z,
                    None => {
                        path.push((d, a, c, None));
                        break;
                    }
                }
            } else {
                sample_categorical(&chance.probs, rng)
            };
            path.push((d, a, c, Some(z)));
            d = match tree.chances[c].children[z] {
                Some(next) => next,
                None => {
                    let chance = &tree.chances[c];
                    let next = tree.decisions.len();
                    tree.decisions.push(Decision {
                        state: Some(chance.state.clone()),
                        z: if branch { z } else { 0 },
                        prior: chance.prior.clone(),
                        bootstrap: Some(chance.predicted_value),
                        steps_left: chance.steps_left,
                        depth: chance.depth,
                        visits: vec![0; n_a],
                        children: vec![Child::Unexpanded; n_a],
                        value: chance.predicted_value,
                    });
                    tree.chances[c].children[z] = Some(next);
                    next
                }
            };
        }

        for &(d, a, c, z) in &path {
            tree.decisions[d].visits[a] += 1;
            if let Some(z) = z {
                tree.chances[c].visits[z] += 1;
            }
        }
        for &(d, _, c, _) in path.iter().rev() {
            tree.refresh_chance(c);
            tree.refresh_decision(d);
        }
    }

    let root_node = &tree.decisions[0];
    let visit_counts = root_node.visits.clone();
    let total: u32 = visit_counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParameter("no reachable action at the root".into()));
    }
    let mut action = 0;
    for (a, n) in visit_counts.iter().enumerate() {
        if *n > visit_counts[action] {
            action = a;
        }
    }
    let q_values = root_node
        .children
        .iter()
        .zip(&visit_counts)
        .map(|(c, n)| match c {
            Child::Node(c) if *n > 0 => Some(tree.q(*c)),
            _ => None,
        })
        .collect();
    Ok(MctsResult {
        action,
        value: root_node.value,
        policy: visit_counts.iter().map(|n| *n as f64 / total as f64).collect(),
        visit_counts,
        q_values,
    })
}
