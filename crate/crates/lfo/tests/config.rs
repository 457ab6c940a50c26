use lfo::config::{offsets, ExperimentConfig};
use lfo::HarnessError;

#[test]
fn defaults_are_valid_and_dump_round_trips() {
    let c = ExperimentConfig::default();
    c.validate().unwrap();
    let back = ExperimentConfig::from_json(&c.dump()).unwrap();
    assert_eq!(back.dump(), c.dump());
    assert_eq!(back.hash(), c.hash());
    assert_eq!(ExperimentConfig::from_json("{}").unwrap().dump(), c.dump());
}

#[test]
fn unknown_keys_are_config_errors() {
    for text in [
        r#"{"tagg": "x"}"#,
        r#"{"rl": {"train": {"iteratons": 3}}}"#,
        r#"{"data": {"k": 2, "extra": 1}}"#,
    ] {
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)), "{text}: {err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn stage_seeds_cannot_be_set() {
    for text in [
        r#"{"localizer": {"meta": {"seed": 3}}}"#,
        r#"{"reward": {"pairs": {"seed": 3}}}"#,
        r#"{"rl": {"train": {"bc": {"seed": 3}}}}"#,
    ] {
        assert!(
            matches!(
                ExperimentConfig::from_json(text),
                Err(HarnessError::Config(_))
            ),
            "{text}"
        );
    }
}

#[test]
fn stage_seeds_follow_the_master_seed() {
    let c = ExperimentConfig::from_json(r#"{"master_seed": 100}"#).unwrap();
    assert_eq!(c.meta_config(2).seed, 102);
    assert_eq!(c.pair_config().seed, 100 + offsets::PAIRS);
    assert_eq!(c.reward_config().seed, 100 + offsets::REWARD);
    assert_eq!(c.rl_config().seed, 100 + offsets::POLICY);
    assert_eq!(c.rl_config().bc.seed, 101 + offsets::POLICY);
    assert!(c.describe().contains("rl.train.seed = 5100"));
}

#[test]
fn invalid_values_are_rejected() {
    for text in [
        r#"{"data": {"demo_order": [0, 0]}}"#,
        r#"{"data": {"k": 0}}"#,
        r#"{"data": {"train_colors": [0, 1, 2, 40]}}"#,
        r#"{"reward": {"noise_flip": 1.5}}"#,
        r#"{"rl": {"eval_trials": 0}}"#,
    ] {
        assert!(
            matches!(
                ExperimentConfig::from_json(text),
                Err(HarnessError::Config(_))
            ),
            "{text}"
        );
    }
}
