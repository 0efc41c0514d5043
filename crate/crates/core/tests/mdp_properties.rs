use cpm_core::bears::{self, GRIZZLY, TEDDY};
use cpm_core::mdp::{
    epsilon_factored, optimal_value, policy_value, random_mdp, random_policies, sample_trajectories,
    FactoredPolicy,
};
use proptest::prelude::*;

fn mc_mean_and_se(returns: &[f64]) -> (f64, f64) {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn fuzzy_bear_uniform_monte_carlo() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let uniform = FactoredPolicy::from_marginal(vec![vec![0.5, 0.5]; 4]).unwrap();
    let trajs = sample_trajectories(&mdp, &uniform, 100_000, 11).unwrap();
    let returns: Vec<f64> = trajs.iter().map(|t| t.total_reward()).collect();
    let (mean, se) = mc_mean_and_se(&returns);
    assert!((mean - 0.125).abs() < 3.0 * se, "mean {mean} se {se}");

    // Teddy frequency after the forest step.
    let teddy = trajs.iter().filter(|t| t.state(1) == TEDDY).count() as f64;
    assert!(trajs.iter().all(|t| t.state(1) == TEDDY || t.state(1) == GRIZZLY));
    let n = trajs.len() as f64;
    let freq = teddy / n;
    let se = (0.25 / n).sqrt();
    assert!((freq - 0.5).abs() < 3.0 * se);
}

#[test]
fn sampling_is_reproducible() {
    let mdp = bears::avoid_fuzzy_bear(0.3).unwrap();
    let pol = epsilon_factored(bears::mixed_behavior_intent(), 0.01, 2).unwrap();
    let a = sample_trajectories(&mdp, &pol, 50, 5).unwrap();
    let b = sample_trajectories(&mdp, &pol, 50, 5).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = sample_trajectories(&mdp, &pol, 50, 6).unwrap();
    assert_ne!(a, c);
    for t in &a {
        assert_eq!(t.len(), mdp.horizon());
        for s in &t.steps {
            assert!((s.intent_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn random_policies_are_distinct_and_reproducible() {
    let mdp = bears::fuzzy_bear(0.5).unwrap();
    let a = random_policies(&mdp, 500, 0.01, 3).unwrap();
    let b = random_policies(&mdp, 500, 0.01, 3).unwrap();
    assert_eq!(a, b);
    for (i, p) in a.iter().enumerate() {
        for s in 0..mdp.num_states() {
            assert!((p.intent(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for q in &a[i + 1..] {
            assert_ne!(p, q);
        }
    }
    assert!(random_policies(&mdp, 0, 0.01, 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backward_induction_matches_monte_carlo(seed in 0u64..1000, ns in 2usize..=6, na in 2usize..=3, h in 1usize..=4) {
        let mdp = random_mdp(ns, na, h, seed);
        let pol = &random_policies(&mdp, 1, 0.1, seed + 1).unwrap()[0];
        let exact = policy_value(&mdp, pol).unwrap();
        let trajs = sample_trajectories(&mdp, pol, 100_000, seed + 2).unwrap();
        let returns: Vec<f64> = trajs.iter().map(|t| t.total_reward()).collect();
        let (mean, se) = mc_mean_and_se(&returns);
        prop_assert!((mean - exact).abs() < 4.0 * se + 1e-12, "exact {} mc {} se {}", exact, mean, se);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn optimal_dominates_every_policy(seed in 0u64..100_000, ns in 2usize..=6, na in 2usize..=4, h in 1usize..=4, eps in 0.0f64..=1.0) {
        let mdp = random_mdp(ns, na, h, seed);
        let (vf, greedy) = optimal_value(&mdp);
        let v_star = vf.get(mdp.start_state(), h);
        for pol in random_policies(&mdp, 5, eps, seed).unwrap() {
            prop_assert!(policy_value(&mdp, &pol).unwrap() <= v_star + 1e-12);
        }
        // Greedy actions attain the Bellman backup at every (state, steps remaining).
        for k in 1..=h {
            for s in 0..ns {
                let a = greedy.action(s, k);
                let q = mdp.reward(s, a) + mdp.transition(s, a).iter().zip(&vf.values[k - 1]).map(|(p, v)| p * v).sum::<f64>();
                prop_assert!((q - vf.get(s, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginalisation_identity_is_exact(seed in 0u64..100_000, ns in 2usize..=6, na in 2usize..=4, h in 1usize..=4, eps in 0.0f64..=1.0) {
        let mdp = random_mdp(ns, na, h, seed);
        let pol = &random_policies(&mdp, 1, eps, seed).unwrap()[0];
        let flat = FactoredPolicy::from_marginal(pol.marginal_table()).unwrap();
        prop_assert_eq!(policy_value(&mdp, pol).unwrap(), policy_value(&mdp, &flat).unwrap());
    }
}
