use lfo_core::reacher::EnvConfig;
use lfo_core::rl::*;
use lfo_core::taskgen::TaskSpec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn undiscounted_gae_is_reversed_cumulative_sum(rewards in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let values = vec![0.0; rewards.len() + 1];
        let adv = gae(&rewards, &values, 1.0, 1.0).unwrap();
        prop_assert_eq!(adv.len(), rewards.len());
        for t in 0..rewards.len() {
            let direct: f64 = rewards[t..].iter().sum();
            prop_assert!((adv[t] - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn myopic_gae_is_one_step_error(
        rv in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20),
        last in -5.0f64..5.0,
        lambda in 0.0f64..1.0,
    ) {
        let rewards: Vec<f64> = rv.iter().map(|p| p.0).collect();
        let mut values: Vec<f64> = rv.iter().map(|p| p.1).collect();
        values.push(last);
        let adv = gae(&rewards, &values, 0.0, lambda).unwrap();
        for t in 0..rewards.len() {
            prop_assert!((adv[t] - (rewards[t] - values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_identity_and_clip_monotonicity(
        a in -10.0f64..10.0,
        eps in 0.05f64..0.5,
        d1 in 0.0f64..2.0,
        d2 in 0.0f64..2.0,
    ) {
        prop_assert_eq!(ppo_surrogate(1.0, a, eps), a);
        let (near, far) = if d1 <= d2 { (eps + d1, eps + d2) } else { (eps + d2, eps + d1) };
        // beyond the clip boundary on either side
        prop_assert!(ppo_surrogate(1.0 + far, a, eps) <= ppo_surrogate(1.0 + near, a, eps) + 1e-12);
        let (lo_near, lo_far) = ((1.0 - near).max(0.0), (1.0 - far).max(0.0));
        prop_assert!(ppo_surrogate(lo_far, a, eps) <= ppo_surrogate(lo_near, a, eps) + 1e-12);
    }

    #[test]
    fn normalized_advantages_ignore_reward_scale(
        rewards in prop::collection::vec(-3.0f64..3.0, 2..30),
        c in 0.01f64..100.0,
    ) {
        let spread = rewards.iter().cloned().fold(f64::MIN, f64::max) - rewards.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let values = vec![0.0; rewards.len() + 1];
        let scaled: Vec<f64> = rewards.iter().map(|r| r * c).collect();
        let mut a = gae(&rewards, &values, 0.99, 0.95).unwrap();
        let mut b = gae(&scaled, &values, 0.99, 0.95).unwrap();
        normalize_advantages(&mut a);
        normalize_advantages(&mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }
}

#[test]
fn evaluation_repeats_bitwise() {
    let env = EnvConfig::default();
    let task = TaskSpec {
        target_colors: vec![0, 1],
        distractor_colors: vec![2, 3],
    };
    let policy = PolicyModel::new(observation_width(&env), 8, -0.5, 4).unwrap();
    for seed in [0, 1, 99] {
        let a = evaluate_policy(&policy, &env, &task, 0, None, 10, seed).unwrap();
        let b = evaluate_policy(&policy, &env, &task, 0, None, 10, seed).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let s = execute_sequence(&[&policy, &policy], &[0, 1], &env, &task, 5, seed).unwrap();
        assert!(s.overall <= s.per_subtask.iter().cloned().fold(1.0, f64::min));
    }
}
