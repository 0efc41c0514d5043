//! Finite-difference validation of the analytic gradients.

use serde::Serialize;

use crate::model::LearnedPartialModel;
use crate::tape::{ParamId, Tape};
use crate::train::{loss_and_gradients, loss_graph, Batch, LossMask, TrainConfig};

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares every parameter entry's analytic gradient with a central finite
/// difference of step `h`. `only` restricts the check to parameters whose
/// names start with one of the given prefixes.
pub fn gradient_check(
    model: &LearnedPartialModel,
    batch: &Batch,
    config: &TrainConfig,
    mask: LossMask,
    h: f64,
    only: Option<&[&str]>,
) -> GradCheck {
    let (_, grads) = loss_and_gradients(model, batch, config, mask);
    let mut probe = model.clone();
    let mut out = GradCheck { max_relative_error: 0.0, worst_parameter: String::new(), entries_checked: 0 };
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        let name = model.params().name(id).to_string();
        if let Some(prefixes) = only {
            if !prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
        }
        let (rows, cols) = model.params().get(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let original = model.params().get(id)[[r, c]];
                probe.params_mut().get_mut(id)[[r, c]] = original + h;
                let up = loss_value(&probe, batch, config, mask);
                probe.params_mut().get_mut(id)[[r, c]] = original - h;
                let down = loss_value(&probe, batch, config, mask);
                probe.params_mut().get_mut(id)[[r, c]] = original;
                let numeric = (up - down) / (2.0 * h);
                let err = relative_error(grads.entry(id, r, c), numeric);
                out.entries_checked += 1;
                if err > out.max_relative_error {
                    out.max_relative_error = err;
                    out.worst_parameter = format!("{name}[{r},{c}]");
                }
            }
        }
    }
    out
}

fn loss_value(model: &LearnedPartialModel, batch: &Batch, config: &TrainConfig, mask: LossMask) -> f64 {
    let mut tape = Tape::new(model.params());
    let (root, _) = loss_graph(&mut tape, model, batch, config, mask);
    tape.scalar(root)
}
