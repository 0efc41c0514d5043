//! Depth-limited expectimax. Depth counts tree layers: a decision layer, then
//! a chance layer over intents, then a decision layer, and so on. Non-causal
//! models get a single-branch chance layer.

use super::{best_action, PlanResult, PlanningModel, Root};
use crate::error::{Error, Result};

pub fn expectimax<M: PlanningModel>(model: &M, root: &Root, depth: usize) -> Result<PlanResult> {
    if depth == 0 {
        return Err(Error::InvalidParameter("expectimax depth must be at least 1".into()));
    }
    if root.steps_left == 0 {
        return Err(Error::InvalidParameter("no steps left to plan".into()));
    }
    let q_values: Vec<Option<f64>> = (0..model.num_actions())
        .map(|a| {
            model
                .initial_state(root, a)
                .map(|h| q_value(model, &h, depth - 1, root.steps_left - 1))
        })
        .collect();
    let (action, value) = best_action(&q_values)
        .ok_or_else(|| Error::InvalidParameter("no reachable action at the root".into()))?;
    Ok(PlanResult { action, value, q_values })
}

/// Reward of the step into `h` plus the discounted chance-layer value.
fn q_value<M: PlanningModel>(model: &M, h: &M::State, depth: usize, steps_left: usize) -> f64 {
    model.predict(h).reward + model.discount() * chance_value(model, h, depth, steps_left)
}

fn chance_value<M: PlanningModel>(model: &M, h: &M::State, depth: usize, steps_left: usize) -> f64 {
    if steps_left == 0 {
        return 0.0;
    }
    if depth == 0 {
        return model.predict(h).value;
    }
    if !model.is_causal() {
        return decision_value(model, h, 0, depth - 1, steps_left);
    }
    model
        .intent_dist(h)
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(z, p)| p * decision_value(model, h, z, depth - 1, steps_left))
        .sum()
}

fn decision_value<M: PlanningModel>(model: &M, h: &M::State, z: usize, depth: usize, steps_left: usize) -> f64 {
    if depth == 0 {
        return model.predict(h).value;
    }
    let q: Vec<Option<f64>> = (0..model.num_actions())
        .map(|a| model.step(h, z, a).map(|next| q_value(model, &next, depth - 1, steps_left - 1)))
        .collect();
    best_action(&q).map_or_else(|| model.predict(h).value, |(_, v)| v)
}

/// Open-loop action sequence along the expectimax tree: the best action at
/// each decision, following the most probable intent at each chance layer.
pub fn principal_variation<M: PlanningModel>(model: &M, root: &Root, depth: usize) -> Result<Vec<usize>> {
    let first = expectimax(model, root, depth)?;
    let mut actions = vec![first.action];
    let mut h = model
        .initial_state(root, first.action)
        .ok_or_else(|| Error::InvalidParameter("root action became unreachable".into()))?;
    let mut depth = depth - 1;
    let mut steps_left = root.steps_left - 1;
    while depth >= 2 && steps_left > 0 {
        let z = if model.is_causal() {
            let p = model.intent_dist(&h);
            cpm_core::dist::argmax(&p)
        } else {
            0
        };
        let q: Vec<Option<f64>> = (0..model.num_actions())
            .map(|a| model.step(&h, z, a).map(|next| q_value(model, &next, depth - 2, steps_left - 1)))
            .collect();
        let Some((a, _)) = best_action(&q) else {
            break;
        };
        actions.push(a);
        h = model.step(&h, z, a).expect("reachable");
        depth -= 2;
        steps_left -= 1;
    }
    Ok(actions)
}
