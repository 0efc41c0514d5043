use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cpm_core::minipacman::MiniPacmanConfig;
use cpm_core::stats::{separated, Summary};
use cpm_models::checkpoint::{load_checkpoint, save_checkpoint};
use cpm_models::minipacman::{collect_episodes, evaluate_planner, model_config, BehaviorConfig};
use cpm_models::model::{LearnedPartialModel, ModelKind};
use cpm_models::planner::{MctsConfig, Planner};
use cpm_models::train::{LossReport, TrainConfig, Trainer};

use crate::config::require;
use crate::output::{write_csv, write_results, write_summary, ResultRow, ReturnRow};
use crate::{parallel_map, run_seed, Check, Error, Result};

pub const NAME: &str = "minipacman";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiniPacmanExperimentConfig {
    pub env: MiniPacmanConfig,
    pub behavior: BehaviorConfig,
    /// Behaviour episodes per seed.
    pub data_episodes: usize,
    pub train: TrainConfig,
    pub seeds: usize,
    pub eval_episodes: usize,
    /// Evaluation games are cut off after this many frames.
    pub eval_max_frames: u32,
    pub planners: Vec<Planner>,
    /// Loss reports are kept every this many training steps.
    pub log_every: usize,
}

impl Default for MiniPacmanExperimentConfig {
    fn default() -> Self {
        let behavior = BehaviorConfig { epsilon: 0.1, ..BehaviorConfig::default() };
        Self {
            env: MiniPacmanConfig::default(),
            train: TrainConfig { batch_size: 64, num_steps: 3000, epsilon: behavior.epsilon, discount: 0.9, ..TrainConfig::default() },
            behavior,
            data_episodes: 300,
            seeds: 8,
            eval_episodes: 8,
            eval_max_frames: 200,
            planners: vec![Planner::Expectimax { depth: 3 }, Planner::Mcts(MctsConfig::default())],
            log_every: 100,
        }
    }
}

impl MiniPacmanExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.seeds > 0 && self.data_episodes > 0 && self.eval_episodes > 0, || {
            "seeds, data_episodes and eval_episodes must be positive".into()
        })?;
        require(self.eval_max_frames > 0, || "eval_max_frames must be positive".into())?;
        require(!self.planners.is_empty(), || "need at least one planner".into())?;
        require(self.log_every > 0, || "log_every must be positive".into())?;
        require(self.train.epsilon == self.behavior.epsilon, || {
            format!("train.epsilon {} must equal behavior.epsilon {}", self.train.epsilon, self.behavior.epsilon)
        })?;
        require(self.behavior.epsilon > 0.0 && self.behavior.epsilon <= 1.0, || {
            format!("behavior.epsilon {} outside (0,1]", self.behavior.epsilon)
        })?;
        self.env.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub planner: String,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub kind: ModelKind,
    pub index: usize,
    pub seed: u64,
    pub losses: Vec<(usize, LossReport)>,
    pub evaluations: Vec<Evaluation>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub planner: String,
    /// Summaries over per-seed mean returns.
    pub cpm: Summary,
    pub ncpm: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiniPacmanOutcome {
    pub seed: u64,
    pub behavior: Summary,
    pub runs: Vec<SeedRun>,
    pub comparisons: Vec<Comparison>,
}

fn train_and_evaluate(
    config: &MiniPacmanExperimentConfig,
    kind: ModelKind,
    index: usize,
    seed: u64,
    checkpoints: Option<&Path>,
) -> Result<SeedRun> {
    let episodes = collect_episodes(&config.env, &config.behavior, config.data_episodes, seed)?;
    let train_config = TrainConfig { seed, ..config.train.clone() };
    let mut trainer = Trainer::new(LearnedPartialModel::new(model_config(kind), seed), train_config)?;
    trainer.replay.extend(episodes);
    let mut losses = Vec::new();
    for step in 0..config.train.num_steps {
        let report = trainer.step()?;
        if step % config.log_every == 0 || step + 1 == config.train.num_steps {
            losses.push((step, report));
        }
    }
    let mut model = trainer.model;
    let checkpoint = match checkpoints {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let stem = dir.join(format!("{}-{index}", kind.name()));
            save_checkpoint(&model, &stem)?;
            model = load_checkpoint(&stem)?;
            Some(stem)
        }
        None => None,
    };
    // Both kinds of a seed see the same evaluation games.
    let eval_seed = seed ^ 0x5eed;
    let evaluations = config
        .planners
        .iter()
        .map(|planner| {
            let returns = evaluate_planner(
                &model,
                planner,
                &config.env,
                config.train.discount,
                config.eval_episodes,
                config.eval_max_frames,
                eval_seed,
            )?;
            Ok(Evaluation { planner: planner.name().to_string(), returns })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedRun { kind, index, seed, losses, evaluations, checkpoint })
}

/// Trains both model kinds on `seeds` independent data sets and evaluates
/// every planner with each. Checkpoints go under `checkpoints` when given and
/// are reloaded before evaluation.
pub fn run(config: &MiniPacmanExperimentConfig, seed: u64, checkpoints: Option<&Path>) -> Result<MiniPacmanOutcome> {
    config.validate()?;
    let jobs: Vec<(ModelKind, usize)> =
        [ModelKind::Cpm, ModelKind::Ncpm].into_iter().flat_map(|k| (0..config.seeds).map(move |i| (k, i))).collect();
    let results = parallel_map(&jobs, |(kind, i)| train_and_evaluate(config, *kind, *i, run_seed(seed, *i), checkpoints));
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let behavior_returns: Vec<f64> = collect_episodes(&config.env, &config.behavior, config.eval_episodes, seed ^ 0x5eed)?
        .iter()
        .map(|e| e.rewards.iter().sum::<f64>())
        .collect();
    let comparisons = config
        .planners
        .iter()
        .enumerate()
        .map(|(p, planner)| {
            let per_seed = |kind: ModelKind| {
                let means: Vec<f64> =
                    runs.iter().filter(|r| r.kind == kind).map(|r| Summary::of(&r.evaluations[p].returns).mean).collect();
                Summary::of(&means)
            };
            Comparison { planner: planner.name().to_string(), cpm: per_seed(ModelKind::Cpm), ncpm: per_seed(ModelKind::Ncpm) }
        })
        .collect();
    Ok(MiniPacmanOutcome { seed, behavior: Summary::of(&behavior_returns), runs, comparisons })
}

impl MiniPacmanOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let mut out: Vec<Check> = self
            .comparisons
            .iter()
            .map(|c| {
                let (clo, chi) = c.cpm.ci95();
                let (nlo, nhi) = c.ncpm.ci95();
                Check::new(
                    &format!("{}: cpm above ncpm with separated 95% intervals", c.planner),
                    c.cpm.mean >= c.ncpm.mean && separated(&c.cpm, &c.ncpm),
                    format!("cpm {:.2} [{clo:.2}, {chi:.2}], ncpm {:.2} [{nlo:.2}, {nhi:.2}] over {} seeds", c.cpm.mean, c.ncpm.mean, c.cpm.n),
                )
            })
            .collect();
        let seeds = self.runs.iter().filter(|r| r.kind == ModelKind::Cpm).count();
        out.push(Check::new("at least 8 seeds", seeds >= 8, format!("{seeds} seeds")));
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<ReturnRow> = self
            .runs
            .iter()
            .flat_map(|r| {
                r.evaluations.iter().flat_map(move |e| {
                    e.returns.iter().enumerate().map(move |(episode, v)| ReturnRow {
                        episode,
                        episode_return: *v,
                        planner: e.planner.clone(),
                        model_kind: r.kind.name().to_string(),
                        seed: r.seed,
                    })
                })
            })
            .collect();
        write_csv(&dir.join("minipacman.csv"), &rows, &["episode", "return", "planner", "model_kind", "seed"])?;
        let results: Vec<ResultRow> = self
            .runs
            .iter()
            .flat_map(|r| {
                r.losses.iter().flat_map(move |(step, l)| {
                    [("total", l.total), ("reward", l.reward), ("value", l.value), ("intent_kl", l.intent_kl), ("root", l.root)]
                        .map(|(m, v)| ResultRow::new(NAME, r.seed, *step as u64, format!("{}/loss_{m}", r.kind.name()), v))
                })
            })
            .collect();
        write_results(dir, NAME, &results)?;
        write_summary(dir, NAME, self.seed, &self.checks(), &(&self.behavior, &self.comparisons))
    }
}
