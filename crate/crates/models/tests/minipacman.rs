use cpm_core::minipacman::{MiniPacman, MiniPacmanConfig, NUM_ACTIONS};
use cpm_models::minipacman::{collect_episodes, encode_features, evaluate_planner, model_config, BehaviorConfig, NUM_ENCODED};
use cpm_models::model::{LearnedPartialModel, ModelKind};
use cpm_models::planner::{MctsConfig, Planner};
use cpm_models::train::check_episode;

fn behavior() -> BehaviorConfig {
    BehaviorConfig { epsilon: 0.1, max_frames: 60, ..BehaviorConfig::default() }
}

#[test]
fn features_are_sorted_unique_and_in_range() {
    let env = MiniPacmanConfig::default();
    for seed in 0..5 {
        let (mut game, mut obs) = MiniPacman::reset(env.clone(), seed).unwrap();
        for t in 0..40 {
            let f = encode_features(game.maze(), &obs);
            assert!(f.windows(2).all(|w| w[0] < w[1]));
            assert!(f.iter().all(|i| *i < NUM_ENCODED));
            assert_eq!(f, encode_features(game.maze(), &obs));
            let step = game.step(t % NUM_ACTIONS).unwrap();
            obs = step.observation;
            if step.done {
                break;
            }
        }
    }
}

#[test]
fn episodes_are_consistent_and_reproducible() {
    let env = MiniPacmanConfig::default();
    let a = collect_episodes(&env, &behavior(), 3, 5).unwrap();
    let b = collect_episodes(&env, &behavior(), 3, 5).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        check_episode(x, NUM_ACTIONS).unwrap();
        assert!(x.len() <= 60);
        assert_eq!(x.actions, y.actions);
        assert_eq!(x.rewards, y.rewards);
    }
}

#[test]
fn heuristic_behaviour_scores() {
    let env = MiniPacmanConfig::default();
    let total: f64 = collect_episodes(&env, &behavior(), 5, 1).unwrap().iter().flat_map(|e| e.rewards.iter()).sum();
    assert!(total > 0.0);
}

#[test]
fn untrained_models_plan_in_minipacman() {
    let env = MiniPacmanConfig::default();
    for kind in [ModelKind::Cpm, ModelKind::Ncpm] {
        let model = LearnedPartialModel::new(model_config(kind), 3);
        for planner in [Planner::Expectimax { depth: 3 }, Planner::Mcts(MctsConfig { num_simulations: 10, ..MctsConfig::default() })] {
            let returns = evaluate_planner(&model, &planner, &env, 0.9, 2, 10, 4).unwrap();
            assert_eq!(returns.len(), 2);
            assert!(returns.iter().all(|r| r.is_finite()));
        }
    }
}

#[test]
fn mismatched_model_is_rejected() {
    let env = MiniPacmanConfig::default();
    let model = LearnedPartialModel::new(cpm_models::model::ModelConfig::tabular(ModelKind::Cpm, 4, 2), 0);
    assert!(evaluate_planner(&model, &Planner::Expectimax { depth: 1 }, &env, 0.9, 1, 5, 0).is_err());
}
