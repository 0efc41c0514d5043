use std::path::Path;

use serde::{Deserialize, Serialize};

use cpm_core::exact::{scatter_experiment, ScatterRow};
use cpm_core::mdp::{optimal_value, TabularMdp};

use crate::config::{require, BearEnv};
use crate::output::{write_csv, write_results, write_summary, ResultRow};
use crate::{Check, Result};

pub const NAME: &str = "scatter";
const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterConfig {
    pub num_policies: usize,
    /// Exploration mixed into every random policy.
    pub epsilon: f64,
    pub p_teddy: f64,
    /// Smallest NCPM excess over the optimal value that counts as optimism.
    pub optimism_margin: f64,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self { num_policies: 500, epsilon: 0.01, p_teddy: 0.5, optimism_margin: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvScatter {
    pub env: BearEnv,
    pub optimal_value: f64,
    pub rows: Vec<ScatterRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterOutcome {
    pub seed: u64,
    pub optimism_margin: f64,
    pub envs: Vec<EnvScatter>,
}

#[derive(Serialize)]
struct CsvRow {
    env: &'static str,
    policy_id: usize,
    v_env: f64,
    v_ncpm: f64,
    v_cpm: f64,
}

pub fn optimal_env_value(mdp: &TabularMdp) -> f64 {
    optimal_value(mdp).0.get(mdp.start_state(), mdp.horizon())
}

pub fn run(config: &ScatterConfig, seed: u64) -> Result<ScatterOutcome> {
    require(config.num_policies > 0, || "num_policies must be positive".into())?;
    require((0.0..=1.0).contains(&config.epsilon), || format!("epsilon {} outside [0,1]", config.epsilon))?;
    let envs = [BearEnv::FuzzyBear, BearEnv::AvoidFuzzyBear]
        .into_iter()
        .map(|env| {
            let mdp = env.build(config.p_teddy)?;
            Ok(EnvScatter {
                env,
                optimal_value: optimal_env_value(&mdp),
                rows: scatter_experiment(&mdp, config.num_policies, config.epsilon, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScatterOutcome { seed, optimism_margin: config.optimism_margin, envs })
}

impl ScatterOutcome {
    pub fn env(&self, env: BearEnv) -> &EnvScatter {
        self.envs.iter().find(|e| e.env == env).expect("both environments are run")
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for e in &self.envs {
            let v = e.optimal_value;
            let bad = e.rows.iter().filter(|r| !(r.v_env <= r.v_cpm + TOLERANCE && r.v_cpm <= v + TOLERANCE)).count();
            out.push(Check::new(
                &format!("{}: v_env <= v_cpm <= v*", e.env.name()),
                bad == 0,
                format!("{bad} of {} rows violate, v* = {v}", e.rows.len()),
            ));
        }
        let fb = self.env(BearEnv::FuzzyBear);
        let best = fb.rows.iter().map(|r| r.v_ncpm).fold(f64::NEG_INFINITY, f64::max);
        out.push(Check::new(
            "fuzzy-bear: some v_ncpm exceeds v* by the margin",
            best > fb.optimal_value + self.optimism_margin,
            format!("max v_ncpm {best}"),
        ));
        let afb = self.env(BearEnv::AvoidFuzzyBear);
        let dev = afb.rows.iter().map(|r| (r.v_cpm - afb.optimal_value).abs()).fold(0.0, f64::max);
        out.push(Check::new(
            "avoid-fuzzy-bear: v_cpm equals v* for every policy",
            dev <= TOLERANCE,
            format!("max deviation {dev:e} from {}", afb.optimal_value),
        ));
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<CsvRow> = self
            .envs
            .iter()
            .flat_map(|e| {
                e.rows.iter().map(|r| CsvRow {
                    env: e.env.name(),
                    policy_id: r.policy_id,
                    v_env: r.v_env,
                    v_ncpm: r.v_ncpm,
                    v_cpm: r.v_cpm,
                })
            })
            .collect();
        write_csv(&dir.join("scatter.csv"), &rows, &["env", "policy_id", "v_env", "v_ncpm", "v_cpm"])?;
        let results: Vec<ResultRow> = self
            .envs
            .iter()
            .flat_map(|e| {
                e.rows.iter().flat_map(move |r| {
                    [("v_env", r.v_env), ("v_ncpm", r.v_ncpm), ("v_cpm", r.v_cpm)].map(|(m, v)| {
                        ResultRow::new(NAME, self.seed, r.policy_id as u64, format!("{}/{m}", e.env.name()), v)
                    })
                })
            })
            .collect();
        write_results(dir, NAME, &results)?;
        let summary: Vec<_> = self.envs.iter().map(|e| (e.env.name(), e.optimal_value, e.rows.len())).collect();
        write_summary(dir, NAME, self.seed, &self.checks(), &summary)
    }
}
