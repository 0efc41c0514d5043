//! Planning-interface implementations for exact and learned models.

use cpm_core::dist::one_hot;
use cpm_core::exact::{condition_on_action, condition_on_intent, expected_reward, intent_distribution};
use cpm_core::mdp::{evaluate_marginal, FactoredPolicy, TabularMdp, ValueFunction};

use super::{ModelOutput, PlanningModel, Root};
use crate::error::Result;
use crate::model::{LearnedPartialModel, Prediction};

/// Model state of an exact tabular model: the belief over the state reached
/// after the last action, and the expected reward of that action.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularState {
    pub belief: Vec<f64>,
    pub reward: f64,
    /// Actions left in the episode after reaching this state.
    pub steps_left: usize,
}

fn behaviour_value(values: &ValueFunction, belief: &[f64], steps_left: usize) -> f64 {
    belief.iter().enumerate().map(|(s, b)| b * values.get(s, steps_left)).sum()
}

fn root_state(mdp: &TabularMdp, root: &Root, a0: usize) -> Option<(Vec<f64>, usize)> {
    let s = *root.features.first()?;
    if s >= mdp.num_states() || root.steps_left == 0 || a0 >= mdp.num_actions() {
        return None;
    }
    Some((one_hot(mdp.num_states(), s), root.steps_left.min(mdp.horizon())))
}

/// Converged non-causal model: conditions on actions only, so the behaviour
/// policy shapes its beliefs.
#[derive(Debug, Clone)]
pub struct ExactNcpmModel {
    mdp: TabularMdp,
    policy: FactoredPolicy,
    marginal: Vec<Vec<f64>>,
    values: ValueFunction,
}

impl ExactNcpmModel {
    pub fn new(mdp: TabularMdp, policy: FactoredPolicy) -> Result<Self> {
        policy.check_dims(&mdp)?;
        let marginal = policy.marginal_table();
        let values = evaluate_marginal(&mdp, &marginal)?;
        Ok(Self { mdp, policy, marginal, values })
    }

    fn advance(&self, prior: &[f64], a: usize, steps_left: usize) -> Option<TabularState> {
        if steps_left == 0 {
            return None;
        }
        let post = condition_on_action(prior, &self.marginal, a)?;
        Some(TabularState {
            reward: expected_reward(&self.mdp, &post, a),
            belief: self.mdp.propagate(&post, a),
            steps_left: steps_left - 1,
        })
    }
}

impl PlanningModel for ExactNcpmModel {
    type State = TabularState;

    fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    fn num_intents(&self) -> usize {
        self.policy.num_intents()
    }

    fn is_causal(&self) -> bool {
        false
    }

    fn discount(&self) -> f64 {
        1.0
    }

    fn initial_state(&self, root: &Root, a0: usize) -> Option<TabularState> {
        let (belief, steps) = root_state(&self.mdp, root, a0)?;
        self.advance(&belief, a0, steps)
    }

    fn step(&self, h: &TabularState, _z: usize, a: usize) -> Option<TabularState> {
        self.advance(&h.belief, a, h.steps_left)
    }

    fn intent_dist(&self, h: &TabularState) -> Vec<f64> {
        intent_distribution(&h.belief, &self.policy)
    }

    fn predict(&self, h: &TabularState) -> ModelOutput {
        let mut prior = vec![0.0; self.num_actions()];
        for (s, b) in h.belief.iter().enumerate() {
            for (a, p) in self.marginal[s].iter().enumerate() {
                prior[a] += b * p;
            }
        }
        ModelOutput { reward: h.reward, value: behaviour_value(&self.values, &h.belief, h.steps_left), prior }
    }

    fn root_prior(&self, root: &Root) -> Vec<f64> {
        match root.features.first() {
            Some(&s) if s < self.mdp.num_states() => self.marginal[s].clone(),
            _ => vec![1.0 / self.num_actions() as f64; self.num_actions()],
        }
    }
}

/// Converged causal model: conditions on the intent before each action, so
/// its beliefs do not depend on the exploration around the intent.
#[derive(Debug, Clone)]
pub struct ExactCpmModel {
    mdp: TabularMdp,
    policy: FactoredPolicy,
    values: ValueFunction,
}

impl ExactCpmModel {
    pub fn new(mdp: TabularMdp, policy: FactoredPolicy) -> Result<Self> {
        policy.check_dims(&mdp)?;
        let values = evaluate_marginal(&mdp, &policy.marginal_table())?;
        Ok(Self { mdp, policy, values })
    }

    fn advance(&self, post: &[f64], a: usize, steps_left: usize) -> Option<TabularState> {
        if steps_left == 0 || a >= self.mdp.num_actions() {
            return None;
        }
        Some(TabularState {
            reward: expected_reward(&self.mdp, post, a),
            belief: self.mdp.propagate(post, a),
            steps_left: steps_left - 1,
        })
    }
}

impl PlanningModel for ExactCpmModel {
    type State = TabularState;

    fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    fn num_intents(&self) -> usize {
        self.policy.num_intents()
    }

    fn is_causal(&self) -> bool {
        true
    }

    fn discount(&self) -> f64 {
        1.0
    }

    fn initial_state(&self, root: &Root, a0: usize) -> Option<TabularState> {
        let (belief, steps) = root_state(&self.mdp, root, a0)?;
        self.advance(&belief, a0, steps)
    }

    fn step(&self, h: &TabularState, z: usize, a: usize) -> Option<TabularState> {
        let post = condition_on_intent(&h.belief, &self.policy, z)?;
        self.advance(&post, a, h.steps_left)
    }

    fn intent_dist(&self, h: &TabularState) -> Vec<f64> {
        intent_distribution(&h.belief, &self.policy)
    }

    fn predict(&self, h: &TabularState) -> ModelOutput {
        ModelOutput {
            reward: h.reward,
            value: behaviour_value(&self.values, &h.belief, h.steps_left),
            prior: self.intent_dist(h),
        }
    }

    fn root_prior(&self, root: &Root) -> Vec<f64> {
        match root.features.first() {
            Some(&s) if s < self.mdp.num_states() => self.policy.marginal(s),
            _ => vec![1.0 / self.num_actions() as f64; self.num_actions()],
        }
    }
}

/// A trained network behind the planning interface. Predictions are cached
/// on the state so each expansion costs one network evaluation.
#[derive(Debug, Clone)]
pub struct LearnedModel<'m> {
    pub model: &'m LearnedPartialModel,
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedState {
    pub h: Vec<f64>,
    pub prediction: Prediction,
}

impl<'m> LearnedModel<'m> {
    pub fn new(model: &'m LearnedPartialModel, discount: f64) -> Self {
        Self { model, discount }
    }

    fn wrap(&self, h: Vec<f64>) -> LearnedState {
        let prediction = self.model.predict(&h);
        LearnedState { h, prediction }
    }
}

impl PlanningModel for LearnedModel<'_> {
    type State = LearnedState;

    fn num_actions(&self) -> usize {
        self.model.config().num_actions
    }

    fn num_intents(&self) -> usize {
        self.model.config().num_intents
    }

    fn is_causal(&self) -> bool {
        self.model.kind().is_causal()
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn initial_state(&self, root: &Root, a0: usize) -> Option<LearnedState> {
        (root.steps_left > 0).then(|| self.wrap(self.model.initial_state(root.features, a0)))
    }

    fn step(&self, h: &LearnedState, z: usize, a: usize) -> Option<LearnedState> {
        Some(self.wrap(self.model.next_state(&h.h, z, a)))
    }

    fn intent_dist(&self, h: &LearnedState) -> Vec<f64> {
        h.prediction.intent.clone()
    }

    /// The intent head doubles as the action prior when intents and actions
    /// share an index space.
    fn predict(&self, h: &LearnedState) -> ModelOutput {
        let n_a = self.num_actions();
        let prior = if self.num_intents() == n_a {
            h.prediction.intent.clone()
        } else {
            vec![1.0 / n_a as f64; n_a]
        };
        ModelOutput { reward: h.prediction.reward, value: h.prediction.value, prior }
    }

    fn root_prior(&self, root: &Root) -> Vec<f64> {
        self.model.root_prior(root.features)
    }
}
