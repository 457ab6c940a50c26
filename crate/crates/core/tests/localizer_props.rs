use lfo_core::diffnet::{optimizer_step, Objective, OptimizerState, ParamVector};
use lfo_core::localizer::*;
use lfo_core::normalize::Normalization;
use lfo_core::reacher::Frame;
use lfo_core::taskgen::{Label, LabeledVideo};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frame(px: Vec<f32>) -> Frame {
    Frame {
        width: px.len() / 3,
        height: 1,
        pixels: px,
    }
}

fn random_video(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    width: usize,
    task_id: usize,
) -> LabeledVideo {
    let frames: Vec<Frame> = (0..n)
        .map(|_| frame((0..width * 3).map(|_| rng.random::<f32>()).collect()))
        .collect();
    // contiguous blocks so every class shows up in whole snippets
    let labels: Vec<Label> = (0..n).map(|i| Some(i * k / n)).collect();
    LabeledVideo::new(
        frames,
        labels,
        vec![[0.0; 4]; n],
        vec![[0.0; 2]; n],
        vec![],
        task_id,
        (0..k).collect(),
    )
}

fn none_count(r: &LocalizationResult) -> usize {
    r.labels.iter().filter(|l| l.is_none()).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn none_count_is_monotone_in_threshold(seed in any::<u64>(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = LocalizerSpec::new(6, 4, 3, 3, 2).unwrap();
        let theta = spec.init(seed);
        let v = random_video(&mut rng, 16, 3, 2, 0);
        let norm = Normalization::identity();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = localize(&spec, &theta, &norm, &v.frames, Threshold::At(lo)).unwrap();
        let b = localize(&spec, &theta, &norm, &v.frames, Threshold::At(hi)).unwrap();
        let off = localize(&spec, &theta, &norm, &v.frames, Threshold::Disabled).unwrap();
        prop_assert!(none_count(&a) <= none_count(&b));
        prop_assert_eq!(none_count(&off), 0);
        for r in [&a, &b, &off] {
            prop_assert!(r.labels.iter().all(|l| l.is_none_or(|c| c < 3)));
            prop_assert!(r.max_probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        for ((l, p), d) in b.labels.iter().zip(&b.max_probs).zip(&off.labels) {
            prop_assert_eq!(l.is_none(), *p < hi);
            if l.is_some() {
                prop_assert_eq!(l, d);
            }
        }
        let all_none = localize(&spec, &theta, &norm, &v.frames, Threshold::At(1.0 + 1e-9)).unwrap();
        prop_assert_eq!(none_count(&all_none), all_none.labels.len());
    }

    #[test]
    fn positive_head_scaling_keeps_labels(seed in any::<u64>(), c in 0.05f32..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = LocalizerSpec::new(6, 4, 3, 3, 2).unwrap();
        let theta = spec.init(seed);
        let mut scaled = theta.clone();
        for v in &mut scaled.values[spec.embed_params()..] {
            *v *= c;
        }
        let v = random_video(&mut rng, 20, 3, 2, 0);
        let norm = Normalization::identity();
        let a = localize(&spec, &theta, &norm, &v.frames, Threshold::Disabled).unwrap();
        let b = localize(&spec, &scaled, &norm, &v.frames, Threshold::Disabled).unwrap();
        prop_assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn metrics_are_bounded_and_match_set_counting(
        pairs in prop::collection::vec((prop::option::of(0usize..4), prop::option::of(0usize..4)), 0..60),
    ) {
        let gt: Vec<Label> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<Label> = pairs.iter().map(|p| p.1).collect();
        let m = localization_metrics(&gt, &pred, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.accuracy));
        prop_assert!((0.0..=1.0).contains(&m.miou));
        let mut ious = Vec::new();
        for c in 0..4 {
            let g: std::collections::BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] == Some(c)).collect();
            let p: std::collections::BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] == Some(c)).collect();
            let union = g.union(&p).count();
            let iou = (union > 0).then(|| g.intersection(&p).count() as f64 / union as f64);
            prop_assert_eq!(m.per_class_iou[c], iou);
            if let Some(x) = iou {
                prop_assert!((0.0..=1.0).contains(&x));
                if !g.is_empty() {
                    ious.push(x);
                }
            }
        }
        let miou = if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
        prop_assert_eq!(m.miou, miou);
    }

    #[test]
    fn one_finetune_step_is_one_sgd_step(seed in any::<u64>(), alpha in 0.001f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = LocalizerSpec::new(6, 4, 3, 2, 2).unwrap();
        let demo = random_video(&mut rng, 12, 2, 2, 0);
        let meta = MetaModel {
            theta: spec.init(seed),
            spec: spec.clone(),
            inner_alpha: alpha,
            trained_with: MetaMode::MamlExact,
            normalization: Normalization::identity(),
            seed,
            iterations: 0,
        };
        let tuned = inner_finetune(&meta, &demo, 1).unwrap();
        let obj = SnippetObjective::from_videos(&spec, &meta.normalization, &[&demo]).unwrap();
        let (_, g) = obj.loss_grad::<f64>(&meta.theta.to_f64()).unwrap();
        let (expected, _) = optimizer_step(&OptimizerState::sgd(alpha), &meta.theta, &g).unwrap();
        prop_assert_eq!(&tuned, &expected);
        prop_assert_eq!(inner_finetune(&meta, &demo, 0).unwrap(), meta.theta.clone());
    }

    #[test]
    fn reptile_single_task_moves_toward_adapted_params(seed in any::<u64>(), meta_lr in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // every video identical, so the sampled support is known
        let base = random_video(&mut rng, 12, 2, 2, 0);
        let mut other = base.clone();
        other.task_id = 1;
        let videos = vec![base.clone(), base.clone(), other.clone(), other];
        let config = MetaTrainConfig {
            mode: MetaMode::Reptile,
            meta_lr,
            iters: 1,
            task_batch: 1,
            hidden: 4,
            embed_dim: 3,
            snippet_len: 2,
            shuffle_labels: false,
            seed,
            ..MetaTrainConfig::default()
        };
        let trained = meta_train(&videos, &config).unwrap();
        let start = MetaModel { theta: trained.spec.init(seed), ..trained.clone() };
        let adapted = inner_finetune(
            &MetaModel { inner_alpha: config.inner_alpha, ..start.clone() },
            &base,
            config.reptile_inner_steps,
        )
        .unwrap();
        for ((t1, t0), a) in trained.theta.values.iter().zip(&start.theta.values).zip(&adapted.values) {
            let want = *t0 as f64 + meta_lr * (*a as f64 - *t0 as f64);
            prop_assert!((*t1 as f64 - want).abs() <= 1e-6 * want.abs().max(1.0), "{t1} vs {want}");
        }
    }
}

#[test]
fn separating_pixel_gives_perfect_accuracy() {
    let spec = LocalizerSpec::new(3, 1, 1, 2, 2).unwrap();
    assert_eq!(spec.param_count(), 10);
    // embed: h = tanh(r - g); e = h; head: logits = [e, -e]
    let theta = ParamVector {
        values: vec![1.0, -1.0, 0.0, 0.0, 1.0, 0.0, 1.0, -1.0, 0.0, 0.0],
        spec_hash: spec.fingerprint(),
    };
    let red = frame(vec![1.0, 0.0, 0.0]);
    let green = frame(vec![0.0, 1.0, 0.0]);
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for (i, len) in [4usize, 6, 2, 8].iter().enumerate() {
        for _ in 0..*len {
            frames.push(if i % 2 == 0 {
                red.clone()
            } else {
                green.clone()
            });
            labels.push(Some(i % 2));
        }
    }
    let n = frames.len();
    let v = LabeledVideo::new(
        frames,
        labels,
        vec![[0.0; 4]; n],
        vec![[0.0; 2]; n],
        vec![],
        0,
        vec![0, 1],
    );
    let r = localize(
        &spec,
        &theta,
        &Normalization::identity(),
        &v.frames,
        Threshold::Disabled,
    )
    .unwrap();
    let m = localization_metrics(&v.snippet_labels(2), &r.labels, 2).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.miou, 1.0);
}

#[test]
fn finetuning_lowers_demo_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = LocalizerSpec::new(6, 4, 3, 2, 2).unwrap();
    let demo = random_video(&mut rng, 12, 2, 2, 0);
    let meta = MetaModel {
        theta: spec.init(9),
        spec: spec.clone(),
        inner_alpha: 0.1,
        trained_with: MetaMode::MamlExact,
        normalization: Normalization::identity(),
        seed: 9,
        iterations: 0,
    };
    let obj = SnippetObjective::from_videos(&spec, &meta.normalization, &[&demo]).unwrap();
    let before = obj.loss(&meta.theta.to_f64()).unwrap();
    let after = obj
        .loss(&inner_finetune(&meta, &demo, 5).unwrap().to_f64())
        .unwrap();
    assert!(after < before, "{after} !< {before}");
}
