use std::rc::Rc;

use cpm_core::bears::{self, FOREST, HUG};
use cpm_core::mdp::{epsilon_exploration, epsilon_factored, policy_value, random_deterministic_mdp, sample_trajectories, FactoredPolicy, TabularMdp};
use cpm_core::stats::Summary;
use cpm_models::checkpoint::{load_checkpoint, save_checkpoint};
use cpm_models::model::{LearnedPartialModel, ModelConfig, ModelKind};
use cpm_models::simulate::{simulate, FollowIntent, SimStatus};
use cpm_models::train::{
    build_batch, intent_posterior, loss_and_gradients, resample_intents, train, Episode, LossMask, TrainConfig, Trainer,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained(mdp: &TabularMdp, policy: &FactoredPolicy, kind: ModelKind, steps: usize, seed: u64) -> LearnedPartialModel {
    let data = sample_trajectories(mdp, policy, 20_000, seed).unwrap();
    let model = LearnedPartialModel::new(ModelConfig::tabular(kind, mdp.num_states(), mdp.num_actions()), seed);
    let config = TrainConfig { num_steps: steps, seed, ..TrainConfig::default() };
    train(model, data.iter().map(Episode::from_trajectory), &config).unwrap().0
}

fn optimal_data_policy(mdp: &TabularMdp) -> FactoredPolicy {
    epsilon_factored(bears::optimal_intent(mdp), 0.01, 2).unwrap()
}

#[test]
fn ncpm_learns_the_biased_hug_reward() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let model = trained(&mdp, &optimal_data_policy(&mdp), ModelKind::Ncpm, 600, 1);
    let h = model.initial_state(&[bears::START], FOREST);
    let h = model.next_state(&h, 0, HUG);
    let r = model.predict(&h).reward;
    assert!((r - 1.0).abs() < 0.05, "predicted hug reward {r}");
}

#[test]
fn cpm_learns_equiprobable_first_intent() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let model = trained(&mdp, &optimal_data_policy(&mdp), ModelKind::Cpm, 600, 2);
    let h = model.initial_state(&[bears::START], FOREST);
    let p = model.predict(&h).intent;
    assert!((p[0] - 0.5).abs() < 0.05 && (p[1] - 0.5).abs() < 0.05, "{p:?}");
}

#[test]
fn deterministic_chain_reward_loss_vanishes() {
    let mdp = random_deterministic_mdp(4, 2, 3, 7);
    let policy = epsilon_factored(vec![vec![0.5, 0.5]; 4], 0.01, 2).unwrap();
    let data: Vec<Episode> = sample_trajectories(&mdp, &policy, 2000, 3).unwrap().iter().map(Episode::from_trajectory).collect();
    for kind in [ModelKind::Ncpm, ModelKind::Cpm] {
        let model = LearnedPartialModel::new(ModelConfig::tabular(kind, 4, 2), 4);
        let config = TrainConfig { num_steps: 1500, learning_rate: 3e-3, final_learning_rate: Some(1e-4), ..TrainConfig::default() };
        let (_, curve) = train(model, data.clone(), &config).unwrap();
        let tail: f64 = curve[curve.len() - 20..].iter().map(|r| r.reward).sum::<f64>() / 20.0;
        assert!(tail < 1e-3, "{kind:?} reward loss {tail}");
    }
}

#[test]
fn training_is_deterministic() {
    let mdp = bears::avoid_fuzzy_bear(0.5).unwrap();
    let policy = epsilon_factored(bears::mixed_behavior_intent(), 0.01, 2).unwrap();
    let data: Vec<Episode> = sample_trajectories(&mdp, &policy, 500, 0).unwrap().iter().map(Episode::from_trajectory).collect();
    let run = || {
        let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Cpm, 4, 2), 3);
        let config = TrainConfig { num_steps: 5, batch_size: 64, seed: 9, ..TrainConfig::default() };
        train(model, data.clone(), &config).unwrap().1
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn empty_replay_is_an_error() {
    let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Cpm, 4, 2), 0);
    let mut trainer = Trainer::new(model, TrainConfig::default()).unwrap();
    assert!(trainer.step().is_err());
}

#[test]
fn intent_loss_is_the_exact_kl() {
    let e = Rc::new(Episode {
        states: vec![vec![0], vec![1], vec![3]],
        actions: vec![FOREST, HUG],
        intents: vec![0, 0],
        intent_dists: vec![vec![0.5, 0.5], vec![0.3, 0.7]],
        rewards: vec![0.0, 1.0],
    });
    let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Ncpm, 4, 2), 6);
    let config = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = build_batch(&[(e, 0)], &model, &config, &mut rng).unwrap();
    let (report, _) = loss_and_gradients(&model, &batch, &config, LossMask::only_intent());

    let q = model.predict(&model.initial_state(&[0], FOREST)).intent;
    let m = [0.3, 0.7];
    let exact: f64 = m.iter().zip(&q).map(|(m, q)| m * (m / q).ln()).sum();
    assert!((report.intent_kl - exact).abs() < 1e-12);
    assert!((report.total - config.c_policy * exact).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<f64> = (0..100_000)
        .map(|_| {
            let z = cpm_core::dist::sample_categorical(&m, &mut rng);
            (m[z] / q[z]).ln()
        })
        .collect();
    let s = Summary::of(&samples);
    assert!((s.mean - exact).abs() < 4.0 * s.std_err, "{} vs {exact}", s.mean);
}

#[test]
fn behaviour_simulation_matches_policy_value() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let policy = epsilon_factored(bears::mixed_behavior_intent(), 0.01, 2).unwrap();
    let truth = policy_value(&mdp, &policy).unwrap();
    let psi = FollowIntent { epsilon: 0.01, num_actions: 2 };
    for kind in [ModelKind::Ncpm, ModelKind::Cpm] {
        let model = trained(&mdp, &policy, kind, 1500, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let root = policy.marginal(bears::START);
        let returns: Vec<f64> = (0..20_000)
            .map(|_| {
                let a0 = cpm_core::dist::sample_categorical(&root, &mut rng);
                simulate(&model, &[bears::START], a0, &psi, 2, Some(2), &mut rng).total_reward()
            })
            .collect();
        let mean = Summary::of(&returns).mean;
        assert!((mean - truth).abs() < 0.02, "{kind:?}: simulated {mean}, true {truth}");
    }
}

#[test]
fn follow_intent_with_cpm_recovers_optimal_value() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let model = trained(&mdp, &optimal_data_policy(&mdp), ModelKind::Cpm, 1500, 5);
    let psi = FollowIntent { epsilon: 0.0, num_actions: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let returns: Vec<f64> = (0..20_000)
        .map(|_| simulate(&model, &[bears::START], FOREST, &psi, 2, Some(2), &mut rng).total_reward())
        .collect();
    let mean = Summary::of(&returns).mean;
    assert!((mean - 0.5).abs() < 0.03, "simulated {mean}");
}

#[test]
fn ncpm_simulation_ignores_intent_samples() {
    let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Ncpm, 4, 2), 8);
    let h = model.initial_state(&[0], 0);
    let mut a = h.clone();
    let mut b = h;
    for (za, zb, act) in [(0, 1, 1), (1, 0, 0), (1, 1, 1)] {
        a = model.next_state(&a, za, act);
        b = model.next_state(&b, zb, act);
        assert_eq!(model.predict(&a), model.predict(&b));
    }
}

#[test]
fn causal_predictions_depend_only_on_the_past() {
    // Changing a later intent or action leaves earlier predictions unchanged.
    let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Cpm, 4, 2), 10);
    let h1 = model.initial_state(&[0], 1);
    let h2 = model.next_state(&h1, 0, 1);
    let before = model.predict(&h2);
    let _ = model.next_state(&h2, 1, 0);
    assert_eq!(model.predict(&h2), before);
    assert_ne!(model.predict(&model.next_state(&h1, 1, 1)), before);
}

#[test]
fn long_simulations_are_flagged() {
    let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Cpm, 4, 2), 0);
    let psi = FollowIntent { epsilon: 0.1, num_actions: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = simulate(&model, &[0], 0, &psi, 5, Some(2), &mut rng);
    assert_eq!(r.status, SimStatus::BeyondTrainedHorizon);
    assert_eq!(r.steps.len(), 5);
}

#[test]
fn resampling_follows_the_posterior() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let policy = epsilon_factored(vec![vec![0.5, 0.5]; 4], 0.01, 2).unwrap();
    let trajs = sample_trajectories(&mdp, &policy, 1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0usize; 2];
    let n = 100_000;
    for _ in 0..n {
        let t = resample_intents(&trajs[0], 2, 0.01, &mut rng).unwrap();
        assert_eq!(t.steps.iter().map(|s| s.a).collect::<Vec<_>>(), trajs[0].steps.iter().map(|s| s.a).collect::<Vec<_>>());
        counts[(t.steps[0].z == t.steps[0].a) as usize] += 1;
    }
    let p = counts[1] as f64 / n as f64;
    let sd = (0.995f64 * 0.005 / n as f64).sqrt();
    assert!((p - 0.995).abs() < 4.0 * sd, "{p}");
    // Uniform exploration leaves the stored intents as the posterior.
    assert_eq!(intent_posterior(&[0.2, 0.8], 1, 2, 1.0).unwrap(), vec![0.2, 0.8]);
    // Vanishing exploration collapses onto the executed action.
    let p = intent_posterior(&[0.5, 0.5], 1, 2, 1e-12).unwrap();
    assert!(p[1] > 1.0 - 1e-11);
}

#[test]
fn zero_posterior_mass_is_an_error() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let policy = epsilon_factored(vec![vec![1.0, 0.0]; 4], 0.0, 2).unwrap();
    let mut t = sample_trajectories(&mdp, &policy, 1, 0).unwrap().remove(0);
    t.steps[0].a = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(resample_intents(&t, 2, 0.0, &mut rng).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = LearnedPartialModel::new(ModelConfig::tabular(ModelKind::Cpm, 4, 2), 12);
    let stem = dir.path().join("model");
    let manifest = save_checkpoint(&model, &stem).unwrap();
    assert_eq!(manifest.endianness, "little");
    assert_eq!(manifest.params[0].offset, 0);
    let loaded = load_checkpoint(&stem).unwrap();
    assert_eq!(loaded.params(), model.params());
    assert_eq!(loaded.config(), model.config());
    let bytes = std::fs::metadata(stem.with_extension("bin")).unwrap().len();
    assert_eq!(bytes as usize, model.params().num_scalars() * 8);
}

proptest! {
    #[test]
    fn intent_posterior_recovers_the_prior(
        weights in prop::collection::vec(0.01f64..1.0, 2..5),
        epsilon in 0.01f64..1.0,
    ) {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let prior: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let explore = epsilon_exploration(epsilon, n);
        // Summing p(a) p(z | a) over actions gives back m(z).
        let mut recovered = vec![0.0; n];
        for a in 0..n {
            let pa: f64 = prior.iter().zip(&explore).map(|(m, row)| m * row[a]).sum();
            let post = intent_posterior(&prior, a, n, epsilon).unwrap();
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (r, p) in recovered.iter_mut().zip(&post) {
                *r += pa * p;
            }
        }
        for (r, m) in recovered.iter().zip(&prior) {
            prop_assert!((r - m).abs() < 1e-12);
        }
    }
}
