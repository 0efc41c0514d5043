use cpm_core::bears::{self, START};
use cpm_core::exact::{cpm_build, ncpm_build};
use cpm_core::mdp::{epsilon_factored, sample_trajectories};
use cpm_models::model::{LearnedPartialModel, ModelConfig, ModelKind};
use cpm_models::tables::{cpm_deviation, ncpm_deviation};
use cpm_models::train::{train, Episode, TrainConfig};

#[test]
fn kinds_must_match_their_tables() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let policy = epsilon_factored(bears::optimal_intent(&mdp), 0.01, 2).unwrap();
    let cpm = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Cpm, 4, 2), 0);
    let ncpm = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Ncpm, 4, 2), 0);
    assert!(ncpm_deviation(&cpm, START, &ncpm_build(&mdp, &policy).unwrap()).is_err());
    assert!(cpm_deviation(&ncpm, START, &cpm_build(&mdp, &policy).unwrap()).is_err());
    let dev = cpm_deviation(&cpm, START, &cpm_build(&mdp, &policy).unwrap()).unwrap();
    // Rewards for [a0], [a0, z1, a1] and intents for [a0] over both start actions.
    assert_eq!(dev.entries, 2 + 2 * 2 * 2 + 2);
}

#[test]
fn trained_ncpm_reproduces_the_biased_table() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let policy = epsilon_factored(bears::optimal_intent(&mdp), 0.01, 2).unwrap();
    let data = sample_trajectories(&mdp, &policy, 20_000, 3).unwrap();
    let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Ncpm, 4, 2), 1);
    let config = TrainConfig { num_steps: 3000, learning_rate: 3e-3, final_learning_rate: Some(1e-5), ..TrainConfig::default() };
    let model = train(model, data.iter().map(Episode::from_trajectory), &config).unwrap().0;
    let exact = ncpm_build(&mdp, &policy).unwrap();
    // The hug entry is far from the true 0.25: the behaviour only hugs teddies.
    assert!(exact.entry(&[0, bears::HUG]).unwrap().expected_reward > 0.9);
    let dev = ncpm_deviation(&model, START, &exact).unwrap();
    assert!(dev.max() < 0.03, "{dev:?}");
}
