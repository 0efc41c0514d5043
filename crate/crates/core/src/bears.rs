//! The two-step bear MDPs.
//!
//! From the start state the agent walks into the forest and meets a teddy bear
//! (probability `p_teddy`) or a grizzly. Hugging the teddy pays +1, hugging the
//! grizzly -0.5, running pays 0. The avoid variant adds a second start action,
//! staying home, that pays 0.6 and ends the episode.

use crate::dist::one_hot;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub const START: usize = 0;
pub const TEDDY: usize = 1;
pub const GRIZZLY: usize = 2;
pub const END: usize = 3;
pub const NUM_STATES: usize = 4;

/// Start-state actions. In the plain variant both actions enter the forest.
pub const FOREST: usize = 0;
pub const STAY_HOME: usize = 1;
/// Actions in front of a bear.
pub const HUG: usize = 0;
pub const RUN: usize = 1;

pub const HOME_REWARD: f64 = 0.6;
pub const TEDDY_HUG_REWARD: f64 = 1.0;
pub const GRIZZLY_HUG_REWARD: f64 = -0.5;

pub fn fuzzy_bear(p_teddy: f64) -> Result<TabularMdp> {
    build(p_teddy, false)
}

pub fn avoid_fuzzy_bear(p_teddy: f64) -> Result<TabularMdp> {
    build(p_teddy, true)
}

fn build(p_teddy: f64, stay_home: bool) -> Result<TabularMdp> {
    if !(p_teddy > 0.0 && p_teddy < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p_teddy must lie in (0,1), got {p_teddy}"
        )));
    }
    let forest = vec![0.0, p_teddy, 1.0 - p_teddy, 0.0];
    let end = one_hot(NUM_STATES, END);
    let start_row = if stay_home {
        vec![forest.clone(), end.clone()]
    } else {
        vec![forest.clone(), forest]
    };
    let transitions = vec![start_row, vec![end.clone(), end.clone()], vec![end.clone(), end.clone()], vec![end.clone(), end]];
    let rewards = vec![
        vec![0.0, if stay_home { HOME_REWARD } else { 0.0 }],
        vec![TEDDY_HUG_REWARD, 0.0],
        vec![GRIZZLY_HUG_REWARD, 0.0],
        vec![0.0, 0.0],
    ];
    TabularMdp::new(START, 2, transitions, rewards, vec![false, false, false, true])
}

/// Deterministic intents: `start_action` at the start, then hug the teddy and
/// run from the grizzly.
pub fn bear_intent(start_action: usize) -> Vec<Vec<f64>> {
    vec![
        one_hot(2, start_action),
        one_hot(2, HUG),
        one_hot(2, RUN),
        one_hot(2, 0),
    ]
}

/// Optimal intents for either variant.
pub fn optimal_intent(mdp: &TabularMdp) -> Vec<Vec<f64>> {
    let home = mdp.reward(START, STAY_HOME) > 0.0;
    bear_intent(if home { STAY_HOME } else { FOREST })
}

/// Sub-optimal behaviour: enter the forest half of the time, then act
/// optimally with probability 0.9.
pub fn mixed_behavior_intent() -> Vec<Vec<f64>> {
    vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.1, 0.9], vec![0.5, 0.5]]
}

pub fn state_name(s: usize) -> &'static str {
    match s {
        START => "start",
        TEDDY => "teddy",
        GRIZZLY => "grizzly",
        END => "end",
        _ => "?",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{epsilon_factored, optimal_value, policy_value, FactoredPolicy};

    #[test]
    fn rejects_degenerate_probabilities() {
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(fuzzy_bear(p), Err(Error::InvalidParameter(_))));
            assert!(avoid_fuzzy_bear(p).is_err());
        }
    }

    #[test]
    fn optimal_values() {
        let (v, _) = optimal_value(&fuzzy_bear(0.5).unwrap());
        assert!((v.get(START, 2) - 0.5).abs() < 1e-15);
        let (v, g) = optimal_value(&avoid_fuzzy_bear(0.5).unwrap());
        assert!((v.get(START, 2) - 0.6).abs() < 1e-15);
        assert_eq!(g.action(START, 2), STAY_HOME);
        let (v, _) = optimal_value(&avoid_fuzzy_bear(0.55).unwrap());
        assert!((v.get(START, 2) - 0.6).abs() < 1e-15);
        let (v, _) = optimal_value(&fuzzy_bear(0.999).unwrap());
        assert!((v.get(START, 2) - 0.999).abs() < 1e-12);
    }

    #[test]
    fn forest_branch_of_avoid_variant() {
        for p in [0.1, 0.3, 0.5, 0.9] {
            let mdp = avoid_fuzzy_bear(p).unwrap();
            // Open-loop sequences through the forest: (forest, hug), (forest, run).
            let hug = p * TEDDY_HUG_REWARD + (1.0 - p) * GRIZZLY_HUG_REWARD;
            let best = hug.max(0.0);
            let (v, _) = optimal_value(&mdp);
            // Closed loop in the forest is p * 1.
            assert!((v.get(START, 2) - (p * 1.0).max(0.6)).abs() < 1e-15);
            let hug_seq = FactoredPolicy::from_marginal(vec![vec![1.0, 0.0]; 4]).unwrap();
            let run_seq = FactoredPolicy::from_marginal(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
            let v_open = policy_value(&mdp, &hug_seq).unwrap().max(policy_value(&mdp, &run_seq).unwrap());
            assert!((v_open - best).abs() < 1e-15);
        }
    }

    #[test]
    fn stay_home_policy_value() {
        let mdp = avoid_fuzzy_bear(0.5).unwrap();
        let pol = epsilon_factored(bear_intent(STAY_HOME), 0.0, 2).unwrap();
        assert!((policy_value(&mdp, &pol).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn optimal_closed_loop_on_fuzzy_bear() {
        let mdp = fuzzy_bear(0.5).unwrap();
        let pol = epsilon_factored(optimal_intent(&mdp), 0.0, 2).unwrap();
        assert!((policy_value(&mdp, &pol).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixed_behaviour_value() {
        let mdp = avoid_fuzzy_bear(0.5).unwrap();
        let pol = epsilon_factored(mixed_behavior_intent(), 0.0, 2).unwrap();
        let by_hand = 0.5 * 0.6 + 0.5 * (0.5 * 0.9 * 1.0 + 0.5 * (0.9 * 0.0 + 0.1 * -0.5));
        assert!((policy_value(&mdp, &pol).unwrap() - by_hand).abs() < 1e-15);
        assert!((by_hand - 0.5125).abs() < 1e-15);
    }
}
