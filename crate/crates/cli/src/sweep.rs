use std::path::Path;

use serde::{Deserialize, Serialize};

use cpm_core::bears;
use cpm_core::exact::{cpm_optimal_value, epsilon_sweep, interventional_value, SweepRow};
use cpm_core::mdp::{epsilon_factored, TabularMdp};

use crate::config::{require, BearEnv};
use crate::output::{write_csv, write_results, write_summary, ResultRow};
use crate::{Check, Result};

pub const NAME: &str = "sweep";
const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub env: BearEnv,
    pub p_teddy: f64,
    /// Exploration levels in (0, 1].
    pub grid: Vec<f64>,
    /// Stand-in for the epsilon -> 0 limit, evaluated in addition to the grid.
    pub limit_epsilon: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            env: BearEnv::FuzzyBear,
            p_teddy: 0.5,
            grid: (1..=100).map(|i| i as f64 / 100.0).collect(),
            limit_epsilon: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub seed: u64,
    pub env: BearEnv,
    pub grid: Vec<f64>,
    pub limit: SweepRow,
    pub rows: Vec<SweepRow>,
    /// Optimal CPM value when the data policy is uniform.
    pub uniform_cpm: f64,
    /// Best value of a fixed action sequence in the real environment.
    pub best_open_loop: f64,
    /// Largest reward available in the environment.
    pub max_reward: f64,
}

/// Best interventional value over all action sequences of full length.
pub fn best_open_loop_value(mdp: &TabularMdp) -> Result<f64> {
    let (na, h) = (mdp.num_actions(), mdp.horizon());
    let mut best = f64::NEG_INFINITY;
    for code in 0..na.pow(h as u32) {
        let plan: Vec<usize> = (0..h).map(|t| code / na.pow(t as u32) % na).collect();
        best = best.max(interventional_value(mdp, &plan)?);
    }
    Ok(best)
}

pub fn run(config: &SweepConfig, seed: u64) -> Result<SweepOutcome> {
    require(!config.grid.is_empty(), || "grid must not be empty".into())?;
    for e in config.grid.iter().chain([&config.limit_epsilon]) {
        require(*e > 0.0 && *e <= 1.0, || format!("epsilon {e} outside (0,1]"))?;
    }
    let mdp = config.env.build(config.p_teddy)?;
    let base = bears::optimal_intent(&mdp);
    let rows = epsilon_sweep(&mdp, &base, &config.grid)?;
    let limit = epsilon_sweep(&mdp, &base, &[config.limit_epsilon])?[0];
    let n = mdp.num_actions();
    let uniform = epsilon_factored(vec![vec![1.0 / n as f64; n]; mdp.num_states()], 0.0, n)?;
    let max_reward = (0..mdp.num_states())
        .flat_map(|s| (0..n).map(move |a| (s, a)))
        .map(|(s, a)| mdp.reward(s, a))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SweepOutcome {
        seed,
        env: config.env,
        grid: config.grid.clone(),
        limit,
        rows,
        uniform_cpm: cpm_optimal_value(&mdp, &uniform)?,
        best_open_loop: best_open_loop_value(&mdp)?,
        max_reward,
    })
}

impl SweepOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let c0 = self.rows[0].v_cpm;
        let dev = self.rows.iter().chain([&self.limit]).map(|r| (r.v_cpm - c0).abs()).fold(0.0, f64::max);
        let mut out = vec![
            Check::new("v_cpm constant over epsilon", dev < TOLERANCE, format!("max deviation {dev:e}")),
            Check::new(
                "v_ncpm at the small-epsilon limit equals the largest reward",
                (self.limit.v_ncpm - self.max_reward).abs() < TOLERANCE,
                format!("v_ncpm({:e}) = {}, max reward {}", self.limit.epsilon, self.limit.v_ncpm, self.max_reward),
            ),
        ];
        let full = self.rows.iter().find(|r| r.epsilon == 1.0);
        out.push(match full {
            Some(r) => Check::new(
                "v_ncpm at epsilon 1 equals v_cpm of the uniform policy and the best open-loop value",
                (r.v_ncpm - self.uniform_cpm).abs() < TOLERANCE && (self.uniform_cpm - self.best_open_loop).abs() < TOLERANCE,
                format!("{} vs {} vs {}", r.v_ncpm, self.uniform_cpm, self.best_open_loop),
            ),
            None => Check::new("v_ncpm at epsilon 1", false, "grid does not contain 1.0"),
        });
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut rows = vec![self.limit];
        rows.extend(&self.rows);
        write_csv(&dir.join("sweep.csv"), &rows, &["epsilon", "v_ncpm", "v_cpm"])?;
        let results: Vec<ResultRow> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                [("epsilon", r.epsilon), ("v_ncpm", r.v_ncpm), ("v_cpm", r.v_cpm)]
                    .map(|(m, v)| ResultRow::new(NAME, self.seed, i as u64, m, v))
            })
            .collect();
        write_results(dir, NAME, &results)?;
        write_summary(dir, NAME, self.seed, &self.checks(), self)
    }
}
