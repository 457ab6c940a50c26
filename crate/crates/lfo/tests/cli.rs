use std::path::Path;
use std::process::Command;

use lfo::formats::read_dataset;
use lfo::store::Store;

const TINY: &str = r#"{
  "data": {"train_videos_per_task": 2, "validation_videos_per_task": 2, "meta_test_videos_per_task": 2,
           "replicates": 1, "pool_videos": 3, "heldout_videos": 2},
  "localizer": {"meta": {"iters": 2, "hidden": 6, "embed_dim": 3}, "baseline": {"steps": 3}},
  "reward": {"train": {"steps": 3, "hidden": 6, "embed_dim": 3, "predictor_hidden": 6}, "pairs": {"n": 60}, "eval_pairs": 20},
  "rl": {"train": {"iterations": 1, "rollouts": 1, "probe_episodes": 1, "hidden": 6}, "eval_trials": 3}
}"#;

fn lfo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lfo"))
        .args(args)
        .env("LFO_THREADS", "1")
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn localize_before_meta_train_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tiny_config(dir.path());
    let o = lfo(&["localize", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("localizer_r0"));
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"unknown": 1}"#).unwrap();
    let o = lfo(&[
        "gen-data",
        "--config",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = lfo(&["gen-data", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_dump_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfo(&["config-dump"]);
    assert!(o.status.success());
    let p = dir.path().join("dump.json");
    std::fs::write(&p, &o.stdout).unwrap();
    let o2 = lfo(&["config-dump", "--config", p.to_str().unwrap()]);
    assert_eq!(o.stdout, o2.stdout);
    assert!(lfo(&["describe"]).status.success());
}

#[test]
fn gen_data_counts_match_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tiny_config(dir.path());
    let o = lfo(&[
        "gen-data",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--reference",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let store = Store::open(&out).unwrap();
    for name in ["train_r0", "validation_r0", "meta_test_r0"] {
        let d = read_dataset(&store.path(name).unwrap()).unwrap();
        let m = d.manifest.unwrap();
        assert_eq!(d.videos.len(), m.tasks.len() * m.videos_per_task, "{name}");
    }
    assert_eq!(
        read_dataset(&store.path("pool").unwrap())
            .unwrap()
            .videos
            .len(),
        3
    );
    assert!(out.join("report/datasets.csv").exists());
}

#[test]
fn stages_chain_and_seed_override_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = lfo(&[
        "reproduce-all",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for t in [
        "table_i_localization",
        "table_ii_rl",
        "reward_models",
        "fig3_accumulated_reward",
        "fig4_learning_curves",
    ] {
        assert!(a.join(format!("report/{t}.csv")).exists(), "{t}");
    }
    let rows = std::fs::read_to_string(a.join("report/table_ii_rl.csv")).unwrap();
    let labels: Vec<_> = rows
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().to_string())
        .collect();
    assert_eq!(
        labels,
        [
            "with GT rewards",
            "Ours (MAML)",
            "with GT Seg.",
            "with Single Demo.",
            "without Seg."
        ]
    );

    let o = lfo(&[
        "gen-data",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert!(o.status.success());
    let sa = Store::open(&a).unwrap();
    let sb = Store::open(&b).unwrap();
    assert_ne!(
        sa.get("pool").unwrap().sha256,
        sb.get("pool").unwrap().sha256
    );
}
