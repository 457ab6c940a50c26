use lfo::formats::*;
use lfo::HarnessError;
use lfo_core::localizer::{meta_train, MetaTrainConfig};
use lfo_core::reacher::{EnvConfig, Frame, Target};
use lfo_core::reward::RewardModel;
use lfo_core::rl::PolicyModel;
use lfo_core::taskgen::{generate_ordered, LabeledVideo, TaskSpec};
use proptest::prelude::*;

fn task() -> TaskSpec {
    TaskSpec {
        target_colors: vec![0, 1],
        distractor_colors: vec![2, 3],
    }
}

fn small_videos(n: usize) -> Vec<LabeledVideo> {
    generate_ordered(&EnvConfig::default(), &task(), 0, &[0, 1], n, 3).unwrap()
}

fn video_strategy() -> impl Strategy<Value = LabeledVideo> {
    (1usize..6, 1usize..4, 1usize..4).prop_flat_map(|(n, w, h)| {
        let px = w * h * 3;
        (
            prop::collection::vec(prop::collection::vec(any::<f32>(), px), n),
            prop::collection::vec(prop::option::of(0usize..3), n),
            prop::collection::vec(any::<[f32; 4]>(), n),
            prop::collection::vec(any::<[f32; 2]>(), n),
            0usize..9,
        )
            .prop_map(move |(frames, labels, states, actions, task_id)| {
                let frames = frames
                    .into_iter()
                    .map(|pixels| Frame {
                        width: w,
                        height: h,
                        pixels,
                    })
                    .collect();
                let targets = vec![Target {
                    color: 1,
                    position: [0.25, -0.5],
                }];
                LabeledVideo::new(
                    frames,
                    labels,
                    states,
                    actions,
                    targets,
                    task_id,
                    vec![1, 0],
                )
            })
    })
}

fn bits(v: &LabeledVideo) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    (
        v.frames
            .iter()
            .flat_map(|f| f.pixels.iter().map(|x| x.to_bits()))
            .collect(),
        v.states.iter().flatten().map(|x| x.to_bits()).collect(),
        v.actions.iter().flatten().map(|x| x.to_bits()).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_round_trip_is_bitwise(videos in prop::collection::vec(video_strategy(), 0..4)) {
        let data = Dataset { manifest: None, videos };
        let bytes = encode_dataset(&data).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(back.videos.len(), data.videos.len());
        for (a, b) in data.videos.iter().zip(&back.videos) {
            prop_assert_eq!(bits(a), bits(b));
            prop_assert_eq!(&a.frame_labels, &b.frame_labels);
            prop_assert_eq!(a.task_id, b.task_id);
            prop_assert_eq!(&a.order, &b.order);
            prop_assert_eq!(&a.targets, &b.targets);
        }
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn any_truncation_is_rejected(cut in 0usize..1000) {
        let data = Dataset { manifest: None, videos: small_videos(1) };
        let bytes = encode_dataset(&data).unwrap();
        let cut = cut % bytes.len();
        prop_assert!(decode_dataset(&bytes[..cut]).is_err());
    }
}

#[test]
fn generated_dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.lfod");
    let data = Dataset {
        manifest: None,
        videos: small_videos(2),
    };
    write_dataset(&path, &data).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), data);
}

fn localizer_checkpoint() -> Checkpoint {
    let mut videos = small_videos(4);
    videos[2].task_id = 1;
    videos[3].task_id = 1;
    let cfg = MetaTrainConfig {
        iters: 0,
        hidden: 6,
        embed_dim: 3,
        ..MetaTrainConfig::default()
    };
    Checkpoint::Localizer(meta_train(&videos, &cfg).unwrap())
}

#[test]
fn checkpoints_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut reward = RewardModel::new(12, 5, 3, 4, 9).unwrap();
    reward.subtask_id = Some(1);
    let models = [
        localizer_checkpoint(),
        Checkpoint::Reward(reward),
        Checkpoint::Policy(PolicyModel::new(14, 8, -0.5, 4).unwrap()),
    ];
    for model in models {
        let path = dir.path().join(format!("{}.lfom", model.kind()));
        save_checkpoint(&path, &model).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(
            encode_checkpoint(&back).unwrap(),
            encode_checkpoint(&model).unwrap()
        );
        if let (Checkpoint::Localizer(a), Checkpoint::Localizer(b)) = (&model, &back) {
            let bits = |m: &lfo_core::localizer::MetaModel| {
                m.theta
                    .values
                    .iter()
                    .map(|x| x.to_bits())
                    .collect::<Vec<_>>()
            };
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(
            checkpoint_kind(&std::fs::read(&path).unwrap()).unwrap(),
            model.kind()
        );
    }
}

#[test]
fn kind_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.lfom");
    save_checkpoint(
        &path,
        &Checkpoint::Policy(PolicyModel::new(14, 8, -0.5, 4).unwrap()),
    )
    .unwrap();
    match load_reward(&path) {
        Err(HarnessError::Kind { expected, found }) => {
            assert_eq!(expected, "reward");
            assert_eq!(found, "policy");
        }
        other => panic!("expected kind error, got {other:?}"),
    }
}

#[test]
fn header_errors() {
    let bytes = encode_checkpoint(&localizer_checkpoint()).unwrap();

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    assert!(matches!(
        decode_checkpoint(&bad),
        Err(HarnessError::Format(_))
    ));
    assert!(matches!(
        decode_checkpoint(
            &encode_dataset(&Dataset {
                manifest: None,
                videos: vec![]
            })
            .unwrap()
        ),
        Err(HarnessError::Format(_))
    ));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(
        decode_checkpoint(&bad),
        Err(HarnessError::Version {
            found: 99,
            expected: 1
        })
    ));

    let cut = bytes.len() - 6;
    match decode_checkpoint(&bytes[..cut]) {
        Err(HarnessError::Corruption { offset, .. }) => assert_eq!(offset, cut as u64),
        other => panic!("expected corruption, got {other:?}"),
    }

    let mut long = bytes.clone();
    long.extend_from_slice(&[0, 0, 0, 0]);
    match decode_checkpoint(&long) {
        Err(HarnessError::Corruption { offset, .. }) => assert_eq!(offset, bytes.len() as u64),
        other => panic!("expected corruption, got {other:?}"),
    }
}
