use std::path::Path;

use serde::{Deserialize, Serialize};

use cpm_core::mdp::TabularMdp;
use cpm_core::stats::Summary;
use cpm_models::dyna::{collect_behavior, mixed_bear_behavior, Dyna, DynaConfig, DynaPoint};
use cpm_models::model::{LearnedPartialModel, ModelConfig, ModelKind};
use cpm_models::train::{train, Episode, TrainConfig};

use crate::config::require;
use crate::output::{write_csv, write_results, write_summary, ResultRow};
use crate::{parallel_map, run_seed, Check, Error, Result};

pub const NAME: &str = "dyna";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynaExperimentConfig {
    /// Independent runs per model kind.
    pub runs: usize,
    pub p_teddy: f64,
    /// Exploration of the behaviour policy that generates model data.
    pub behavior_epsilon: f64,
    pub trajectories: usize,
    pub train: TrainConfig,
    pub dyna: DynaConfig,
    pub optimal_value: f64,
    pub value_tolerance: f64,
    pub consistency_tolerance: f64,
    pub optimism_gap: f64,
}

impl Default for DynaExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            p_teddy: 0.5,
            behavior_epsilon: 0.1,
            trajectories: 10_000,
            train: TrainConfig { batch_size: 64, num_steps: 2000, epsilon: 0.1, ..TrainConfig::default() },
            dyna: DynaConfig { num_updates: 3000, ..DynaConfig::default() },
            optimal_value: 0.6,
            value_tolerance: 0.02,
            consistency_tolerance: 0.05,
            optimism_gap: 0.1,
        }
    }
}

impl DynaExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.runs > 0, || "runs must be positive".into())?;
        require(self.trajectories > 0, || "trajectories must be positive".into())?;
        require(self.train.epsilon == self.behavior_epsilon, || {
            format!("train.epsilon {} must equal behavior_epsilon {}", self.train.epsilon, self.behavior_epsilon)
        })?;
        mixed_bear_behavior(self.behavior_epsilon).map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.dyna.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynaRun {
    pub kind: ModelKind,
    pub index: usize,
    pub seed: u64,
    pub curve: Vec<DynaPoint>,
}

impl DynaRun {
    pub fn run_id(&self) -> String {
        format!("{}-{}", self.kind.name(), self.index)
    }

    pub fn last(&self) -> DynaPoint {
        *self.curve.last().expect("curves include step 0")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindSummary {
    pub kind: ModelKind,
    pub real: Summary,
    pub predicted: Summary,
    /// Mean of predicted minus real.
    pub gap: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynaOutcome {
    pub seed: u64,
    pub runs: Vec<DynaRun>,
    pub summaries: Vec<KindSummary>,
    #[serde(skip)]
    config: DynaExperimentConfig,
}

/// One run: behaviour data, a model fitted to it, Dyna inside the model.
pub fn dyna_run(mdp: &TabularMdp, config: &DynaExperimentConfig, kind: ModelKind, seed: u64) -> Result<Vec<DynaPoint>> {
    let behavior = mixed_bear_behavior(config.behavior_epsilon)?;
    let episodes: Vec<Episode> =
        collect_behavior(mdp, &behavior, config.trajectories, seed)?.iter().map(Episode::from_trajectory).collect();
    let model = LearnedPartialModel::new(ModelConfig::tabular(kind, mdp.num_states(), mdp.num_actions()), seed);
    let train_config = TrainConfig { seed, ..config.train.clone() };
    let (model, _) = train(model, episodes.clone(), &train_config)?;
    let mut dyna = Dyna::new(&model, mdp, &episodes, config.dyna.clone(), seed)?;
    Ok(dyna.run(mdp)?)
}

pub fn run(config: &DynaExperimentConfig, seed: u64) -> Result<DynaOutcome> {
    config.validate()?;
    let mdp = cpm_core::bears::avoid_fuzzy_bear(config.p_teddy).map_err(|e| Error::Config(e.to_string()))?;
    let jobs: Vec<(ModelKind, usize)> =
        [ModelKind::Cpm, ModelKind::Ncpm].into_iter().flat_map(|k| (0..config.runs).map(move |i| (k, i))).collect();
    let curves = parallel_map(&jobs, |(kind, i)| dyna_run(&mdp, config, *kind, run_seed(seed, *i)));
    let mut runs = Vec::with_capacity(jobs.len());
    for ((kind, index), curve) in jobs.into_iter().zip(curves) {
        runs.push(DynaRun { kind, index, seed: run_seed(seed, index), curve: curve? });
    }
    let summaries = [ModelKind::Cpm, ModelKind::Ncpm]
        .into_iter()
        .map(|kind| {
            let last: Vec<DynaPoint> = runs.iter().filter(|r| r.kind == kind).map(DynaRun::last).collect();
            let real: Vec<f64> = last.iter().map(|p| p.real_value).collect();
            let predicted: Vec<f64> = last.iter().map(|p| p.predicted_value).collect();
            let gap: Vec<f64> = last.iter().map(|p| p.predicted_value - p.real_value).collect();
            KindSummary { kind, real: Summary::of(&real), predicted: Summary::of(&predicted), gap: Summary::of(&gap) }
        })
        .collect();
    Ok(DynaOutcome { seed, runs, summaries, config: config.clone() })
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    predicted_value: f64,
    real_value: f64,
    run_id: String,
}

impl DynaOutcome {
    pub fn summary(&self, kind: ModelKind) -> &KindSummary {
        self.summaries.iter().find(|s| s.kind == kind).expect("both kinds are run")
    }

    pub fn checks(&self) -> Vec<Check> {
        let c = &self.config;
        let cpm = self.summary(ModelKind::Cpm);
        let ncpm = self.summary(ModelKind::Ncpm);
        let abs_gap: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.kind == ModelKind::Cpm)
            .map(|r| (r.last().predicted_value - r.last().real_value).abs())
            .collect();
        let abs_gap = Summary::of(&abs_gap).mean;
        vec![
            Check::new(
                "cpm real return near optimal",
                (cpm.real.mean - c.optimal_value).abs() <= c.value_tolerance,
                format!("mean {:.4} over {} runs", cpm.real.mean, cpm.real.n),
            ),
            Check::new(
                "cpm prediction matches its real return",
                abs_gap < c.consistency_tolerance,
                format!("mean |predicted - real| {abs_gap:.4}"),
            ),
            Check::new(
                "ncpm prediction exceeds its real return",
                ncpm.gap.mean > c.optimism_gap,
                format!("mean predicted - real {:.4}", ncpm.gap.mean),
            ),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<CurveRow> = self
            .runs
            .iter()
            .flat_map(|r| {
                let id = r.run_id();
                r.curve.iter().map(move |p| CurveRow {
                    step: p.step,
                    predicted_value: p.predicted_value,
                    real_value: p.real_value,
                    run_id: id.clone(),
                })
            })
            .collect();
        write_csv(&dir.join("dyna.csv"), &rows, &["step", "predicted_value", "real_value", "run_id"])?;
        let results: Vec<ResultRow> = self
            .runs
            .iter()
            .flat_map(|r| {
                r.curve.iter().flat_map(move |p| {
                    [("predicted_value", p.predicted_value), ("real_value", p.real_value)]
                        .map(|(m, v)| ResultRow::new(NAME, r.seed, p.step as u64, format!("{}/{m}", r.kind.name()), v))
                })
            })
            .collect();
        write_results(dir, NAME, &results)?;
        write_summary(dir, NAME, self.seed, &self.checks(), &self.summaries)
    }
}
