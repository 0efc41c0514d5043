//! Rollouts inside a learned model under a new policy: sample the intent
//! from the model, pick an action given the intent, update.

use rand::Rng;
use serde::Serialize;

use cpm_core::dist::sample_categorical;
use cpm_core::mdp::epsilon_exploration;

use crate::model::LearnedPartialModel;

/// `psi(a | h, z)`
pub trait SimulationPolicy {
    fn action_probs(&self, h: &[f64], z: usize) -> Vec<f64>;
}

/// Acts on the sampled intent with epsilon-exploration around it, the same
/// rule as the behaviour policy.
#[derive(Debug, Clone, Copy)]
pub struct FollowIntent {
    pub epsilon: f64,
    pub num_actions: usize,
}

impl SimulationPolicy for FollowIntent {
    fn action_probs(&self, _h: &[f64], z: usize) -> Vec<f64> {
        epsilon_exploration(self.epsilon, self.num_actions).swap_remove(z)
    }
}

/// A fixed action distribution, ignoring both `h` and `z`.
#[derive(Debug, Clone)]
pub struct FixedPolicy(pub Vec<f64>);

impl SimulationPolicy for FixedPolicy {
    fn action_probs(&self, _h: &[f64], _z: usize) -> Vec<f64> {
        self.0.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SimStatus {
    Ok,
    /// The rollout ran past the longest horizon seen in training.
    BeyondTrainedHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStep {
    /// Intent sampled before this action; `None` for the given first action.
    pub z: Option<usize>,
    pub a: usize,
    pub reward: f64,
    pub value: f64,
    pub intent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rollout {
    pub steps: Vec<SimStep>,
    pub status: SimStatus,
}

impl Rollout {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Simulates `length` actions starting with `a0` from the observed state.
pub fn simulate<P: SimulationPolicy + ?Sized, R: Rng + ?Sized>(
    model: &LearnedPartialModel,
    s0: &[usize],
    a0: usize,
    psi: &P,
    length: usize,
    trained_horizon: Option<usize>,
    rng: &mut R,
) -> Rollout {
    let status = match trained_horizon {
        Some(t) if length > t => SimStatus::BeyondTrainedHorizon,
        _ => SimStatus::Ok,
    };
    let mut steps = Vec::with_capacity(length);
    if length == 0 {
        return Rollout { steps, status };
    }
    let mut h = model.initial_state(s0, a0);
    let mut pred = model.predict(&h);
    steps.push(SimStep { z: None, a: a0, reward: pred.reward, value: pred.value, intent: pred.intent.clone() });
    for _ in 1..length {
        let z = sample_categorical(&pred.intent, rng);
        let a = sample_categorical(&psi.action_probs(&h, z), rng);
        h = model.next_state(&h, z, a);
        pred = model.predict(&h);
        steps.push(SimStep { z: Some(z), a, reward: pred.reward, value: pred.value, intent: pred.intent.clone() });
    }
    Rollout { steps, status }
}
