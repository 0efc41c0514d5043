use std::rc::Rc;

use cpm_core::mdp::{epsilon_factored, random_mdp, random_policies, sample_trajectories};
use cpm_models::gradcheck::gradient_check;
use cpm_models::model::{LearnedPartialModel, ModelConfig, ModelKind};
use cpm_models::train::{build_batch, Batch, Episode, LossMask, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn small_config(kind: ModelKind) -> ModelConfig {
    ModelConfig { hidden: 8, head_hidden: 8, ..ModelConfig::tabular(kind, 5, 3) }
}

fn train_config() -> TrainConfig {
    // Short returns so the bootstrap path is exercised on horizon-4 episodes.
    TrainConfig { nstep_length: 2, overshoot_length: 3, batch_size: 6, ..TrainConfig::default() }
}

fn episodes(seed: u64) -> Vec<Episode> {
    let mdp = random_mdp(5, 3, 4, seed);
    let base = random_policies(&mdp, 1, 0.0, seed).unwrap().remove(0);
    let policy = epsilon_factored(base.intent_table().to_vec(), 0.1, 3).unwrap();
    sample_trajectories(&mdp, &policy, 10, seed).unwrap().iter().map(Episode::from_trajectory).collect()
}

fn batch(model: &LearnedPartialModel, config: &TrainConfig, seed: u64) -> Batch {
    let eps: Vec<Rc<Episode>> = episodes(seed).into_iter().map(Rc::new).collect();
    let windows: Vec<(Rc<Episode>, usize)> = eps.iter().take(6).enumerate().map(|(i, e)| (Rc::clone(e), i % 3)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_batch(&windows, model, config, &mut rng).unwrap()
}

#[test]
fn small_models_are_small() {
    for kind in [ModelKind::Ncpm, ModelKind::Cpm] {
        let m = LearnedPartialModel::new(small_config(kind), 0);
        assert!(m.params().num_scalars() <= 1000, "{}", m.params().num_scalars());
    }
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let config = train_config();
    for kind in [ModelKind::Ncpm, ModelKind::Cpm] {
        let model = LearnedPartialModel::new(small_config(kind), 11);
        let b = batch(&model, &config, 3);
        assert!(b.unroll >= 3);
        let check = gradient_check(&model, &b, &config, LossMask::ALL, STEP, None);
        assert!(check.entries_checked == model.params().num_scalars());
        assert!(check.max_relative_error < TOLERANCE, "{kind:?}: {check:?}");
    }
}

#[test]
fn per_head_gradients_match_finite_differences() {
    let config = train_config();
    let model = LearnedPartialModel::new(small_config(ModelKind::Cpm), 5);
    let b = batch(&model, &config, 4);
    for (mask, name) in [
        (LossMask::only_reward(), "reward"),
        (LossMask::only_value(), "value"),
        (LossMask::only_intent(), "intent"),
    ] {
        let check = gradient_check(&model, &b, &config, mask, STEP, None);
        assert!(check.max_relative_error < TOLERANCE, "{name}: {check:?}");
    }
    let core = gradient_check(&model, &b, &config, LossMask::ALL, STEP, Some(&["core."]));
    assert!(core.entries_checked > 0);
    assert!(core.max_relative_error < TOLERANCE, "core: {core:?}");
}

#[test]
fn trained_model_gradients_match_finite_differences() {
    let config = TrainConfig { batch_size: 32, ..train_config() };
    let model = LearnedPartialModel::new(small_config(ModelKind::Cpm), 2);
    let mut trainer = Trainer::new(model, TrainConfig { learning_rate: 1e-2, ..config.clone() }).unwrap();
    trainer.replay.extend(episodes(8));
    trainer.train(50).unwrap();
    let b = batch(&trainer.model, &config, 9);
    let check = gradient_check(&trainer.model, &b, &config, LossMask::ALL, STEP, None);
    assert!(check.max_relative_error < TOLERANCE, "{check:?}");
}

#[test]
fn no_loss_terms_means_no_gradient_error() {
    let config = train_config();
    let model = LearnedPartialModel::new(small_config(ModelKind::Ncpm), 1);
    let b = batch(&model, &config, 1);
    let mask = LossMask { reward: false, value: false, intent: false, root: true };
    let check = gradient_check(&model, &b, &config, mask, STEP, Some(&["g.", "core.", "target.", "intent."]));
    assert_eq!(check.max_relative_error, 0.0);
}
