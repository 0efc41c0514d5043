//! Search over partial models.
//!
//! Every model exposes the same interface: embed the observed root state and
//! a first action, step with an intent and an action, and report the intent
//! distribution and predictions at a model state. Non-causal models ignore
//! the intent passed to `step`.

mod adapters;
mod expectimax;
mod mcts;

pub use adapters::{ExactCpmModel, ExactNcpmModel, LearnedModel, TabularState};
pub use expectimax::{expectimax, principal_variation};
pub use mcts::{mcts, puct_scores, MctsConfig, MctsResult, RootNoise};

use rand::Rng;
use serde::{Deserialize, Serialize};

use cpm_core::mdp::TabularMdp;
use cpm_core::stats::Summary;

use crate::error::{Error, Result};

/// What the model predicts at a state `h`: the reward received on the step
/// into `h`, the value of what follows, and a prior over the next action.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub reward: f64,
    pub value: f64,
    pub prior: Vec<f64>,
}

/// The observed state a search starts from.
#[derive(Debug, Clone, Copy)]
pub struct Root<'a> {
    pub features: &'a [usize],
    /// Actions left in the episode, including the one being chosen.
    pub steps_left: usize,
}

pub trait PlanningModel {
    type State: Clone;

    fn num_actions(&self) -> usize;
    fn num_intents(&self) -> usize;
    fn is_causal(&self) -> bool;
    fn discount(&self) -> f64;
    /// `None` when the model assigns the history zero probability.
    fn initial_state(&self, root: &Root, a0: usize) -> Option<Self::State>;
    fn step(&self, h: &Self::State, z: usize, a: usize) -> Option<Self::State>;
    fn intent_dist(&self, h: &Self::State) -> Vec<f64>;
    fn predict(&self, h: &Self::State) -> ModelOutput;
    fn root_prior(&self, root: &Root) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub action: usize,
    pub value: f64,
    /// Per-action values at the root; `None` for unreachable actions.
    pub q_values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Planner {
    Expectimax { depth: usize },
    Mcts(MctsConfig),
}

impl Planner {
    pub fn name(&self) -> &'static str {
        match self {
            Planner::Expectimax { .. } => "expectimax",
            Planner::Mcts(_) => "mcts",
        }
    }

    pub fn plan<M: PlanningModel, R: Rng + ?Sized>(&self, model: &M, root: &Root, rng: &mut R) -> Result<PlanResult> {
        match self {
            Planner::Expectimax { depth } => expectimax(model, root, *depth),
            Planner::Mcts(config) => {
                let r = mcts(model, root, config, rng)?;
                Ok(PlanResult { action: r.action, value: r.value, q_values: r.q_values })
            }
        }
    }
}

/// Returns of a planner acting closed-loop in a tabular MDP, replanning from
/// the observed state at every step.
pub fn act_in_mdp<M: PlanningModel, R: Rng + ?Sized>(
    mdp: &TabularMdp,
    model: &M,
    planner: &Planner,
    episodes: usize,
    rng: &mut R,
) -> Result<(Summary, Vec<f64>)> {
    if model.num_actions() != mdp.num_actions() {
        return Err(Error::InvalidParameter(format!(
            "model has {} actions, MDP has {}",
            model.num_actions(),
            mdp.num_actions()
        )));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = mdp.start_state();
        let mut total = 0.0;
        for t in 0..mdp.horizon() {
            let features = [s];
            let root = Root { features: &features, steps_left: mdp.horizon() - t };
            let a = planner.plan(model, &root, rng)?.action;
            total += mdp.reward(s, a);
            s = mdp.sample_next(s, a, rng);
        }
        returns.push(total);
    }
    Ok((Summary::of(&returns), returns))
}

/// Lowest-index argmax over the reachable entries.
pub(crate) fn best_action(q: &[Option<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (a, v) in q.iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| *v > b) {
                best = Some((a, *v));
            }
        }
    }
    best
}
