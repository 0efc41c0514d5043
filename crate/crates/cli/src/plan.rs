use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cpm_core::exact::interventional_value;
use cpm_core::mdp::{epsilon_factored, sample_trajectories, TabularMdp};
use cpm_core::stats::Summary;
use cpm_models::model::{LearnedPartialModel, ModelConfig, ModelKind};
use cpm_models::planner::{principal_variation, ExactCpmModel, ExactNcpmModel, LearnedModel, Planner, PlanningModel, Root};
use cpm_models::train::{train, Episode, TrainConfig};

use crate::config::{require, BearEnv, DataIntent, ModelChoice};
use crate::output::{write_csv, write_results, write_summary, ResultRow, ReturnRow};
use crate::{Check, Result};

pub const NAME: &str = "plan";

/// Acceptance bounds for `--check`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanCheck {
    pub min_mean: Option<f64>,
    pub max_mean: Option<f64>,
    /// Every episode must start with this action.
    pub first_action: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub env: BearEnv,
    pub p_teddy: f64,
    pub model: ModelChoice,
    pub planner: Planner,
    pub episodes: usize,
    /// Policy the model is fitted to: exact models use it directly, learned
    /// ones are trained on trajectories from it.
    pub data_intent: DataIntent,
    pub data_epsilon: f64,
    pub trajectories: usize,
    pub train: TrainConfig,
    pub check: PlanCheck,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            env: BearEnv::AvoidFuzzyBear,
            p_teddy: 0.5,
            model: ModelChoice::ExactCpm,
            planner: Planner::Expectimax { depth: 3 },
            episodes: 1000,
            data_intent: DataIntent::Optimal,
            data_epsilon: 0.01,
            trajectories: 20_000,
            train: TrainConfig::default(),
            check: PlanCheck::default(),
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.episodes > 0, || "episodes must be positive".into())?;
        require(self.data_epsilon > 0.0 && self.data_epsilon <= 1.0, || {
            format!("data_epsilon {} outside (0,1]", self.data_epsilon)
        })?;
        if matches!(self.model, ModelChoice::Ncpm | ModelChoice::Cpm) {
            require(self.trajectories > 0, || "trajectories must be positive".into())?;
            require(self.train.epsilon == self.data_epsilon, || {
                format!("train.epsilon {} must equal data_epsilon {}", self.train.epsilon, self.data_epsilon)
            })?;
            self.train.validate().map_err(|e| crate::Error::Config(e.to_string()))?;
        }
        if let Planner::Expectimax { depth } = self.planner {
            require(depth > 0, || "expectimax depth must be positive".into())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutcome {
    pub seed: u64,
    pub model: ModelChoice,
    pub planner: String,
    pub returns: Vec<f64>,
    pub first_actions: Vec<usize>,
    pub summary: Summary,
    /// Real value of the open-loop expectimax plan from the start state.
    pub open_loop_value: Option<f64>,
    #[serde(skip)]
    pub check: PlanCheck,
}

fn act<M: PlanningModel>(
    mdp: &TabularMdp,
    model: &M,
    config: &PlanConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<usize>, Option<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(config.episodes);
    let mut first = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        let mut s = mdp.start_state();
        let mut total = 0.0;
        for t in 0..mdp.horizon() {
            let features = [s];
            let root = Root { features: &features, steps_left: mdp.horizon() - t };
            let a = config.planner.plan(model, &root, &mut rng)?.action;
            if t == 0 {
                first.push(a);
            }
            total += mdp.reward(s, a);
            s = mdp.sample_next(s, a, &mut rng);
        }
        returns.push(total);
    }
    let open_loop = match config.planner {
        Planner::Expectimax { depth } => {
            let features = [mdp.start_state()];
            let pv = principal_variation(model, &Root { features: &features, steps_left: mdp.horizon() }, depth)?;
            interventional_value(mdp, &pv).ok()
        }
        Planner::Mcts(_) => None,
    };
    Ok((returns, first, open_loop))
}

/// Trains a tabular-feature model on trajectories of the data policy.
pub fn train_bear_model(
    mdp: &TabularMdp,
    intent: Vec<Vec<f64>>,
    epsilon: f64,
    trajectories: usize,
    kind: ModelKind,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<LearnedPartialModel> {
    let policy = epsilon_factored(intent, epsilon, mdp.num_actions())?;
    let data = sample_trajectories(mdp, &policy, trajectories, seed)?;
    let model = LearnedPartialModel::new(ModelConfig::tabular(kind, mdp.num_states(), mdp.num_actions()), seed);
    let config = TrainConfig { seed, ..train_config.clone() };
    Ok(train(model, data.iter().map(Episode::from_trajectory), &config)?.0)
}

pub fn run(config: &PlanConfig, seed: u64) -> Result<PlanOutcome> {
    config.validate()?;
    let mdp = config.env.build(config.p_teddy)?;
    let intent = config.data_intent.table(&mdp);
    let policy = epsilon_factored(intent.clone(), config.data_epsilon, mdp.num_actions())?;
    let (returns, first_actions, open_loop_value) = match config.model {
        ModelChoice::ExactNcpm => act(&mdp, &ExactNcpmModel::new(mdp.clone(), policy)?, config, seed)?,
        ModelChoice::ExactCpm => act(&mdp, &ExactCpmModel::new(mdp.clone(), policy)?, config, seed)?,
        ModelChoice::Ncpm | ModelChoice::Cpm => {
            let kind = if config.model == ModelChoice::Cpm { ModelKind::Cpm } else { ModelKind::Ncpm };
            let net = train_bear_model(&mdp, intent, config.data_epsilon, config.trajectories, kind, &config.train, seed)?;
            act(&mdp, &LearnedModel::new(&net, config.train.discount), config, seed)?
        }
    };
    Ok(PlanOutcome {
        seed,
        model: config.model,
        planner: config.planner.name().to_string(),
        summary: Summary::of(&returns),
        returns,
        first_actions,
        open_loop_value,
        check: config.check.clone(),
    })
}

impl PlanOutcome {
    pub fn first_action_fraction(&self, a: usize) -> f64 {
        self.first_actions.iter().filter(|x| **x == a).count() as f64 / self.first_actions.len() as f64
    }

    pub fn checks(&self) -> Vec<Check> {
        let mean = self.summary.mean;
        let mut out = Vec::new();
        if let Some(lo) = self.check.min_mean {
            out.push(Check::new("mean return above minimum", mean >= lo, format!("mean {mean} vs {lo}")));
        }
        if let Some(hi) = self.check.max_mean {
            out.push(Check::new("mean return below maximum", mean <= hi, format!("mean {mean} vs {hi}")));
        }
        if let Some(a) = self.check.first_action {
            let f = self.first_action_fraction(a);
            out.push(Check::new("first action in every episode", f == 1.0, format!("action {a} in {:.1}% of episodes", 100.0 * f)));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<ReturnRow> = self
            .returns
            .iter()
            .enumerate()
            .map(|(episode, r)| ReturnRow {
                episode,
                episode_return: *r,
                planner: self.planner.clone(),
                model_kind: self.model.name().to_string(),
                seed: self.seed,
            })
            .collect();
        write_csv(&dir.join("plan.csv"), &rows, &["episode", "return", "planner", "model_kind", "seed"])?;
        let mut results: Vec<ResultRow> = self
            .first_actions
            .iter()
            .enumerate()
            .map(|(i, a)| ResultRow::new(NAME, self.seed, i as u64, "first_action", *a as f64))
            .collect();
        results.push(ResultRow::new(NAME, self.seed, 0, "mean_return", self.summary.mean));
        if let Some(v) = self.open_loop_value {
            results.push(ResultRow::new(NAME, self.seed, 0, "open_loop_value", v));
        }
        write_results(dir, NAME, &results)?;
        write_summary(dir, NAME, self.seed, &self.checks(), self)
    }
}
