//! Read a learned model back out as the tables of the exact converged
//! models, for direct comparison.

use cpm_core::exact::{CpmExact, NcpmExact};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LearnedPartialModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableDeviation {
    pub entries: usize,
    /// Largest absolute reward error over all histories.
    pub max_reward: f64,
    /// Largest absolute intent-probability error; zero for the NCPM.
    pub max_intent: f64,
    /// History with the largest reward error.
    pub worst_history: Vec<usize>,
}

impl TableDeviation {
    pub fn max(&self) -> f64 {
        self.max_reward.max(self.max_intent)
    }
}

fn unroll(model: &LearnedPartialModel, start: usize, a0: usize, pairs: &[(usize, usize)]) -> Vec<f64> {
    let mut h = model.initial_state(&[start], a0);
    for (z, a) in pairs {
        h = model.next_state(&h, *z, *a);
    }
    h
}

fn pairs(rest: &[usize]) -> Vec<(usize, usize)> {
    rest.chunks(2).map(|c| (c[0], c[1])).collect()
}

/// Compares an NCPM on tabular features with its exact tables, keyed by the
/// action history.
pub fn ncpm_deviation(model: &LearnedPartialModel, start: usize, exact: &NcpmExact) -> Result<TableDeviation> {
    if model.kind().is_causal() {
        return Err(Error::InvalidParameter("expected a non-causal model".into()));
    }
    let mut out = TableDeviation { entries: 0, max_reward: 0.0, max_intent: 0.0, worst_history: Vec::new() };
    for (history, entry) in &exact.entries {
        let rest: Vec<(usize, usize)> = history[1..].iter().map(|a| (0, *a)).collect();
        let h = unroll(model, start, history[0], &rest);
        let err = (model.predict(&h).reward - entry.expected_reward).abs();
        if err > out.max_reward {
            out.max_reward = err;
            out.worst_history = history.clone();
        }
        out.entries += 1;
    }
    Ok(out)
}

/// Compares a CPM on tabular features with its exact tables, keyed by the
/// interleaved history `[a_0, z_1, a_1, ..]`.
pub fn cpm_deviation(model: &LearnedPartialModel, start: usize, exact: &CpmExact) -> Result<TableDeviation> {
    if !model.kind().is_causal() {
        return Err(Error::InvalidParameter("expected a causal model".into()));
    }
    let mut out = TableDeviation { entries: 0, max_reward: 0.0, max_intent: 0.0, worst_history: Vec::new() };
    for (history, entry) in &exact.entries {
        let h = unroll(model, start, history[0], &pairs(&history[1..]));
        let err = (model.predict(&h).reward - entry.expected_reward).abs();
        if err > out.max_reward {
            out.max_reward = err;
            out.worst_history = history.clone();
        }
        out.entries += 1;
    }
    for (history, intent) in &exact.intents {
        let h = unroll(model, start, history[0], &pairs(&history[1..]));
        let predicted = model.predict(&h).intent;
        for (p, q) in predicted.iter().zip(intent) {
            out.max_intent = out.max_intent.max((p - q).abs());
        }
        out.entries += 1;
    }
    Ok(out)
}
