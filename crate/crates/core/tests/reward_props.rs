use lfo_core::reacher::Frame;
use lfo_core::reward::*;
use lfo_core::taskgen::{Label, LabeledVideo};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(seed: u64, width: usize) -> RewardModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = RewardModel::new(width * 3, 5, 3, 4, seed).unwrap();
    for v in m
        .embed_params
        .values
        .iter_mut()
        .chain(m.predictor_params.values.iter_mut())
    {
        *v += rng.random_range(-1.0f32..1.0);
    }
    m
}

fn random_clip(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Vec<Frame> {
    (0..n)
        .map(|_| Frame {
            width,
            height: 1,
            pixels: (0..width * 3).map(|_| rng.random::<f32>()).collect(),
        })
        .collect()
}

fn video(frames: Vec<Frame>, labels: Vec<Label>) -> LabeledVideo {
    let n = frames.len();
    LabeledVideo::new(
        frames,
        labels,
        vec![[0.0; 4]; n],
        vec![[0.0; 2]; n],
        vec![],
        0,
        vec![0, 1],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn progress_curve_telescopes_exactly(seed in any::<u64>(), n in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1);
        let m = random_model(seed, 2);
        let clip = random_clip(&mut rng, n, 2);
        let curve = progress_curve(&m, &clip).unwrap();
        prop_assert_eq!(curve.len(), n - 1);
        let g0 = g_eval(&m, &clip[0], &clip[0]).unwrap();
        for (t, c) in curve.iter().enumerate() {
            let direct = g_eval(&m, &clip[0], &clip[t + 1]).unwrap() - g0;
            prop_assert_eq!(c.to_bits(), direct.to_bits());
        }
        // the endpoint ignores the intermediate frames
        let mut shuffled = clip.clone();
        shuffled[1..n - 1].reverse();
        let other = progress_curve(&m, &shuffled).unwrap();
        prop_assert_eq!(curve[n - 2].to_bits(), other[n - 2].to_bits());
    }

    #[test]
    fn step_reward_is_antisymmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5);
        let m = random_model(seed, 2);
        let f = random_clip(&mut rng, 3, 2);
        let ab = step_reward(&m, &f[0], &f[1], &f[2]).unwrap();
        let ba = step_reward(&m, &f[0], &f[2], &f[1]).unwrap();
        prop_assert_eq!(ab.to_bits(), (-ba).to_bits());
        prop_assert_eq!(step_reward(&m, &f[0], &f[1], &f[1]).unwrap(), 0.0);
    }

    #[test]
    fn sampled_pairs_respect_labels_and_gap(
        labels in prop::collection::vec(prop::option::of(0usize..2), 6..40),
        gap in 1usize..4,
        seed in any::<u64>(),
        flip in prop::bool::ANY,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = labels.len();
        let videos = vec![video(random_clip(&mut rng, n, 1), labels.clone()), video(random_clip(&mut rng, n, 1), labels.iter().rev().cloned().collect())];
        let cfg = PairConfig { n: 50, min_gap: gap, seed, flip_prob: if flip { 0.3 } else { 0.0 } };
        match sample_order_pairs(&videos, Activity::Subtask(1), &cfg) {
            Ok(pairs) => {
                prop_assert_eq!(pairs.len(), 50);
                for p in &pairs {
                    let l = &videos[p.video].frame_labels;
                    prop_assert_eq!(l[p.index_a], Some(1));
                    prop_assert_eq!(l[p.index_b], Some(1));
                    prop_assert!(p.index_a.abs_diff(p.index_b) >= gap);
                    if !flip {
                        prop_assert_eq!(p.target, p.truth());
                    }
                }
            }
            Err(e) => {
                let ones: Vec<usize> = (0..n).filter(|&i| labels[i] == Some(1)).collect();
                let feasible = ones.len() >= 2 && ones[ones.len() - 1] - ones[0] >= gap;
                prop_assert!(!feasible, "unexpected error {e}");
            }
        }
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let videos = vec![video(random_clip(&mut rng, 12, 2), vec![Some(0); 12])];
    let pairs = sample_order_pairs(
        &videos,
        Activity::Subtask(0),
        &PairConfig {
            n: 64,
            ..PairConfig::default()
        },
    )
    .unwrap();
    let cfg = RewardTrainConfig {
        steps: 20,
        hidden: 4,
        embed_dim: 2,
        predictor_hidden: 3,
        ..RewardTrainConfig::default()
    };
    let a = train_reward(&videos, &pairs, Some(0), &cfg).unwrap();
    let b = train_reward(&videos, &pairs, Some(0), &cfg).unwrap();
    assert_eq!(a.embed_params, b.embed_params);
    assert_eq!(a.predictor_params, b.predictor_params);
    assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    assert_eq!(a.subtask_id, Some(0));
}
