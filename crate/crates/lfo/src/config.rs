use std::path::Path;

use lfo_core::localizer::{BaselineConfig, Decoding, MetaTrainConfig};
use lfo_core::reacher::EnvConfig;
use lfo_core::reward::{PairConfig, RewardTrainConfig};
use lfo_core::rl::RlConfig;
use lfo_core::taskgen::TaskSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Offsets added to the master seed, one per stage.
pub mod offsets {
    pub const TRAIN_DATA: u64 = 0;
    pub const VALIDATION_DATA: u64 = 1000;
    pub const META_TEST_DATA: u64 = 2000;
    pub const META_TRAIN: u64 = 0;
    pub const BASELINE: u64 = 0;
    pub const POOL_DATA: u64 = 3000;
    pub const HELDOUT_DATA: u64 = 3001;
    pub const PAIRS: u64 = 4000;
    pub const REWARD: u64 = 4001;
    pub const EVAL_PAIRS: u64 = 4002;
    pub const POLICY: u64 = 5000;
    pub const EVALUATION: u64 = 6000;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_colors: Vec<usize>,
    pub meta_test_colors: Vec<usize>,
    /// Subtasks per task.
    pub k: usize,
    /// Targets drawn per scene.
    pub shown: usize,
    pub train_videos_per_task: usize,
    pub validation_videos_per_task: usize,
    pub meta_test_videos_per_task: usize,
    /// Independent localization replicates (seed = master + replicate).
    pub replicates: usize,
    /// Auxiliary videos of the RL task; the first is the segmented demo.
    pub pool_videos: usize,
    pub heldout_videos: usize,
    pub rl_task: TaskSpec,
    /// Visiting order shared by the demo and the auxiliary pool.
    pub demo_order: Vec<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_colors: vec![0, 1, 2, 3],
            meta_test_colors: vec![4, 5, 6, 7],
            k: 2,
            shown: 4,
            train_videos_per_task: 10,
            validation_videos_per_task: 4,
            meta_test_videos_per_task: 4,
            replicates: 3,
            pool_videos: 40,
            heldout_videos: 10,
            rl_task: TaskSpec {
                target_colors: vec![0, 1],
                distractor_colors: vec![2, 3],
            },
            demo_order: vec![0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizerSection {
    pub meta: MetaTrainConfig,
    pub baseline: BaselineConfig,
    pub finetune_steps: usize,
    /// Snippet decoding used when relabeling the auxiliary pool.
    pub decoding: Decoding,
}

impl Default for LocalizerSection {
    fn default() -> Self {
        Self {
            meta: MetaTrainConfig {
                meta_lr: 3e-4,
                ..MetaTrainConfig::default()
            },
            baseline: BaselineConfig::default(),
            finetune_steps: 5,
            decoding: Decoding::Contiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub train: RewardTrainConfig,
    pub pairs: PairConfig,
    /// Flip probability of the label-noise run.
    pub noise_flip: f64,
    /// Held-out pairs per subtask for accuracy.
    pub eval_pairs: usize,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            train: RewardTrainConfig::default(),
            pairs: PairConfig::default(),
            noise_flip: 0.15,
            eval_pairs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub train: RlConfig,
    pub eval_trials: usize,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            train: RlConfig::default(),
            eval_trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub tag: String,
    pub master_seed: u64,
    /// Used when the command line gives no `--out`.
    pub output_dir: Option<String>,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub localizer: LocalizerSection,
    pub reward: RewardSection,
    pub rl: RlSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tag: "desk".into(),
            master_seed: 7,
            output_dir: None,
            env: EnvConfig {
                image_size: 32,
                ..EnvConfig::default()
            },
            data: DataConfig::default(),
            localizer: LocalizerSection::default(),
            reward: RewardSection::default(),
            rl: RlSection::default(),
        }
    }
}

/// Section paths whose `seed` field is derived, never read from the file.
const DERIVED_SEED_PATHS: [&[&str]; 5] = [
    &["localizer", "meta"],
    &["localizer", "baseline"],
    &["reward", "train"],
    &["reward", "pairs"],
    &["rl", "train"],
];

fn section<'a>(v: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(v, |v, k| v.get(*k))
}

fn strip_seeds(v: &mut Value) {
    for path in DERIVED_SEED_PATHS {
        let mut cur = Some(&mut *v);
        for k in path {
            cur = cur.and_then(|c| c.get_mut(*k));
        }
        if let Some(Value::Object(m)) = cur {
            m.remove("seed");
        }
    }
    if let Some(Value::Object(m)) = v.pointer_mut("/rl/train/bc") {
        m.remove("seed");
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut seed_paths: Vec<Vec<&str>> =
            DERIVED_SEED_PATHS.iter().map(|p| p.to_vec()).collect();
        seed_paths.push(vec!["rl", "train", "bc"]);
        for path in seed_paths {
            if section(&raw, &path).and_then(|s| s.get("seed")).is_some() {
                return Err(HarnessError::Config(format!(
                    "{}.seed is derived from master_seed and cannot be set",
                    path.join(".")
                )));
            }
        }
        let config: Self =
            serde_json::from_value(raw).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Loadable JSON with every default filled in and derived seeds omitted.
    pub fn dump(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        strip_seeds(&mut v);
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    /// SHA-256 of the canonical dump.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.dump().as_bytes()))
    }

    pub fn seed(&self, offset: u64) -> u64 {
        self.master_seed.wrapping_add(offset)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.env
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.data
            .rl_task
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let d = &self.data;
        if d.k == 0 || d.shown < d.k {
            return bad(format!(
                "need 1 ≤ k ≤ shown, got k={} shown={}",
                d.k, d.shown
            ));
        }
        let palette = self.env.palette.len().min(self.env.anchors.len());
        if let Some(c) = d
            .train_colors
            .iter()
            .chain(&d.meta_test_colors)
            .find(|&&c| c >= palette)
        {
            return bad(format!("color {c} has no palette entry"));
        }
        if d.rl_task.k() != d.demo_order.len() {
            return bad("demo_order must list every subtask of rl_task".into());
        }
        let mut order = d.demo_order.clone();
        order.sort_unstable();
        if order != (0..d.rl_task.k()).collect::<Vec<_>>() {
            return bad("demo_order must be a permutation of the rl_task subtasks".into());
        }
        if d.replicates == 0 || d.pool_videos < 2 || d.heldout_videos == 0 {
            return bad("replicates, heldout_videos ≥ 1 and pool_videos ≥ 2 required".into());
        }
        if d.train_videos_per_task < 2
            || d.validation_videos_per_task < 2
            || d.meta_test_videos_per_task < 2
        {
            return bad("every split needs at least 2 videos per task".into());
        }
        if !(0.0..=1.0).contains(&self.reward.noise_flip)
            || !(0.0..=1.0).contains(&self.reward.pairs.flip_prob)
        {
            return bad("flip probabilities must lie in [0, 1]".into());
        }
        if self.rl.eval_trials == 0 || self.reward.eval_pairs == 0 {
            return bad("eval_trials and eval_pairs must be positive".into());
        }
        Ok(())
    }

    /// Meta-training config for localization replicate `r`.
    pub fn meta_config(&self, r: usize) -> MetaTrainConfig {
        MetaTrainConfig {
            seed: self.seed(offsets::META_TRAIN + r as u64),
            ..self.localizer.meta.clone()
        }
    }

    pub fn baseline_config(&self, r: usize) -> BaselineConfig {
        BaselineConfig {
            seed: self.seed(offsets::BASELINE + r as u64),
            ..self.localizer.baseline.clone()
        }
    }

    pub fn pair_config(&self) -> PairConfig {
        PairConfig {
            seed: self.seed(offsets::PAIRS),
            ..self.reward.pairs.clone()
        }
    }

    pub fn reward_config(&self) -> RewardTrainConfig {
        RewardTrainConfig {
            seed: self.seed(offsets::REWARD),
            ..self.reward.train.clone()
        }
    }

    pub fn rl_config(&self) -> RlConfig {
        let mut c = self.rl.train.clone();
        c.seed = self.seed(offsets::POLICY);
        c.bc.seed = self.seed(offsets::POLICY + 1);
        c
    }

    /// One line per leaf key: dotted path, default value.
    pub fn describe(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        strip_seeds(&mut v);
        let mut lines = Vec::new();
        flatten("", &v, &mut lines);
        let mut out = String::new();
        out.push_str("# key = value\n");
        for (k, val) in lines {
            out.push_str(&format!("{k} = {val}\n"));
        }
        out.push_str("# derived seeds (master_seed + offset)\n");
        let derived = [
            ("data.train (replicate r adds r)", offsets::TRAIN_DATA),
            (
                "data.validation (replicate r adds r)",
                offsets::VALIDATION_DATA,
            ),
            (
                "data.meta_test (replicate r adds r)",
                offsets::META_TEST_DATA,
            ),
            (
                "localizer.meta.seed (replicate r adds r)",
                offsets::META_TRAIN,
            ),
            (
                "localizer.baseline.seed (replicate r adds r)",
                offsets::BASELINE,
            ),
            ("data.pool", offsets::POOL_DATA),
            ("data.heldout", offsets::HELDOUT_DATA),
            ("reward.pairs.seed", offsets::PAIRS),
            ("reward.train.seed", offsets::REWARD),
            ("reward evaluation pairs", offsets::EVAL_PAIRS),
            ("rl.train.seed", offsets::POLICY),
            ("rl.train.bc.seed", offsets::POLICY + 1),
            ("policy evaluation", offsets::EVALUATION),
        ];
        for (name, off) in derived {
            out.push_str(&format!("{name} = {} (offset {off})\n", self.seed(off)));
        }
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
