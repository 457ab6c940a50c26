use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use lfo_core::localizer::{
    baseline_train, evaluate_baseline, evaluate_meta, localization_metrics, meta_train,
    relabel_videos, MetaModel, MetaTrainConfig,
};
use lfo_core::reacher::EnvConfig;
use lfo_core::reward::{
    pair_accuracy, progress_curve, progress_monotonicity, sample_order_pairs, train_reward,
    Activity, PairConfig, RewardModel,
};
use lfo_core::rl::{
    demo_pairs, evaluate_policy, execute_sequence, train_policy, Controller, RewardSource,
    TrainedPolicy,
};
use lfo_core::taskgen::{
    generate_dataset, generate_ordered, sample_task_splits, DatasetManifest, LabeledVideo, Split,
    TaskSpec,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{offsets, ExperimentConfig};
use crate::error::{HarnessError, Result, StageContext};
use crate::formats::{self, Checkpoint, Dataset};
use crate::report::{emit_report, Curves, Report, Series, Table};
use crate::store::Store;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    MetaTrain,
    Localize,
    TrainReward,
    TrainPolicy,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::GenData,
        Stage::MetaTrain,
        Stage::Localize,
        Stage::TrainReward,
        Stage::TrainPolicy,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::MetaTrain => "meta-train",
            Stage::Localize => "localize",
            Stage::TrainReward => "train-reward",
            Stage::TrainPolicy => "train-policy",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Comparison arms of the RL table: artifact key and row label.
pub const ARMS: [(&str, &str); 5] = [
    ("gt_rewards", "with GT rewards"),
    ("maml_seg", "Ours (MAML)"),
    ("gt_seg", "with GT Seg."),
    ("single_demo", "with Single Demo."),
    ("unsegmented", "without Seg."),
];

pub const REPORT_DIR: &str = "report";

/// Row labels of the localization table's seed-averaged rows.
pub const META_ROW: &str = "meta-trained";
pub const CLASSIFIER_ROW: &str = "classifier baseline";
pub const INIT_ROW: &str = "no meta-training";

pub struct Context {
    pub config: ExperimentConfig,
    pub store: Store,
    /// Single-threaded, bit-reproducible execution.
    pub reference: bool,
    pub threads: usize,
}

/// Worker count from `LFO_THREADS`, else the number of cores.
/// RL-task videos are recorded in the same fixed layout the policies train in.
fn rl_scene(env: &EnvConfig) -> EnvConfig {
    EnvConfig {
        position_jitter: 0.0,
        ..env.clone()
    }
}

/// The subtask performed just before `s` in `order`.
fn predecessor(order: &[usize], s: usize) -> Option<usize> {
    let pos = order.iter().position(|&x| x == s)?;
    pos.checked_sub(1).map(|p| order[p])
}

pub fn default_threads() -> usize {
    std::env::var("LFO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

impl Context {
    pub fn new(config: ExperimentConfig, out: &Path, reference: bool) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            store: Store::open(out)?,
            reference,
            threads: default_threads(),
        })
    }

    /// Maps `f` over independent jobs, in order, on up to `threads` workers.
    fn fan_out<T, R, F>(&self, items: Vec<T>, f: F) -> Result<Vec<R>>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> Result<R> + Sync + Send,
    {
        if self.reference || self.threads <= 1 || items.len() <= 1 {
            return items.into_iter().map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads.min(items.len()))
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
        pool.install(|| items.into_par_iter().map(f).collect())
    }

    fn put_dataset(
        &mut self,
        name: &str,
        data: &Dataset,
        stage: &str,
        seeds: Vec<u64>,
    ) -> Result<()> {
        let bytes = formats::encode_dataset(data)?;
        self.store.put(name, "lfod", &bytes, stage, seeds)?;
        Ok(())
    }

    fn put_model(
        &mut self,
        name: &str,
        model: &Checkpoint,
        stage: &str,
        seeds: Vec<u64>,
    ) -> Result<()> {
        let bytes = formats::encode_checkpoint(model)?;
        self.store.put(name, "lfom", &bytes, stage, seeds)?;
        Ok(())
    }

    pub fn videos(&self, name: &str) -> Result<Vec<LabeledVideo>> {
        Ok(formats::read_dataset(&self.store.path(name)?)?.videos)
    }

    pub fn localizer(&self, name: &str) -> Result<MetaModel> {
        formats::load_localizer(&self.store.path(name)?)
    }

    pub fn reward(&self, name: &str) -> Result<RewardModel> {
        formats::load_reward(&self.store.path(name)?)
    }

    fn task_splits(&self) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>)> {
        let d = &self.config.data;
        sample_task_splits(&d.train_colors, &d.meta_test_colors, d.k, d.shown).stage("gen-data")
    }

    /// Runs one stage, stores its report fragment and re-emits the report.
    pub fn run(&mut self, stage: Stage) -> Result<Report> {
        let t0 = Instant::now();
        let mut fragment = match stage {
            Stage::GenData => self.gen_data()?,
            Stage::MetaTrain => self.meta_train()?,
            Stage::Localize => self.localize()?,
            Stage::TrainReward => self.train_reward()?,
            Stage::TrainPolicy => self.train_policy()?,
            Stage::Evaluate => self.evaluate()?,
        };
        fragment.metadata.insert(
            format!("wall_clock_seconds.{}", stage.name()),
            json!(t0.elapsed().as_secs_f64()),
        );
        let bytes =
            serde_json::to_vec(&fragment).map_err(|e| HarnessError::Report(e.to_string()))?;
        self.store.put(
            &fragment_name(stage),
            "json",
            &bytes,
            stage.name(),
            vec![self.config.master_seed],
        )?;
        self.emit()
    }

    pub fn reproduce_all(&mut self) -> Result<Report> {
        let mut last = Report::default();
        for stage in Stage::ALL {
            last = self.run(stage)?;
        }
        Ok(last)
    }

    /// Merges every stored fragment with run metadata and writes the report.
    pub fn emit(&self) -> Result<Report> {
        let mut report = Report::default();
        for stage in Stage::ALL {
            if let Ok(path) = self.store.path(&fragment_name(stage)) {
                let bytes = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
                let part: Report = serde_json::from_slice(&bytes)
                    .map_err(|e| HarnessError::Format(e.to_string()))?;
                report.merge(part);
            }
        }
        report
            .metadata
            .insert("config_hash".into(), json!(self.config.hash()));
        report
            .metadata
            .insert("master_seed".into(), json!(self.config.master_seed));
        report.metadata.insert("tag".into(), json!(self.config.tag));
        report
            .metadata
            .insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        report
            .metadata
            .insert("reference_mode".into(), json!(self.reference));
        let hashes: BTreeMap<&str, &str> = self
            .store
            .all()
            .iter()
            .map(|(k, a)| (k.as_str(), a.sha256.as_str()))
            .collect();
        report.metadata.insert("artifacts".into(), json!(hashes));
        emit_report(&report, &self.store.dir().join(REPORT_DIR))?;
        Ok(report)
    }

    fn gen_data(&mut self) -> Result<Report> {
        const STAGE: &str = "gen-data";
        enum Job {
            Manifest(DatasetManifest),
            Ordered { n: usize, seed: u64 },
        }
        let c = self.config.clone();
        let d = &c.data;
        let (train_tasks, meta_tasks) = self.task_splits()?;
        let mut jobs = Vec::new();
        for r in 0..d.replicates as u64 {
            let manifest = |split, tasks: &[TaskSpec], per, offset| {
                Job::Manifest(DatasetManifest {
                    split,
                    tasks: tasks.to_vec(),
                    videos_per_task: per,
                    seed: c.seed(offset + r),
                    env: c.env.clone(),
                })
            };
            jobs.push((
                format!("train_r{r}"),
                manifest(
                    Split::Train,
                    &train_tasks,
                    d.train_videos_per_task,
                    offsets::TRAIN_DATA,
                ),
            ));
            jobs.push((
                format!("validation_r{r}"),
                manifest(
                    Split::Validation,
                    &train_tasks,
                    d.validation_videos_per_task,
                    offsets::VALIDATION_DATA,
                ),
            ));
            jobs.push((
                format!("meta_test_r{r}"),
                manifest(
                    Split::MetaTest,
                    &meta_tasks,
                    d.meta_test_videos_per_task,
                    offsets::META_TEST_DATA,
                ),
            ));
        }
        jobs.push((
            "pool".into(),
            Job::Ordered {
                n: d.pool_videos,
                seed: c.seed(offsets::POOL_DATA),
            },
        ));
        jobs.push((
            "heldout".into(),
            Job::Ordered {
                n: d.heldout_videos,
                seed: c.seed(offsets::HELDOUT_DATA),
            },
        ));

        let built = self.fan_out(jobs, |(name, job)| {
            let (data, seed) = match job {
                Job::Manifest(m) => {
                    let seed = m.seed;
                    let videos = generate_dataset(&m).stage(STAGE)?;
                    (
                        Dataset {
                            manifest: Some(m),
                            videos,
                        },
                        seed,
                    )
                }
                Job::Ordered { n, seed } => {
                    let videos =
                        generate_ordered(&rl_scene(&c.env), &d.rl_task, 0, &d.demo_order, n, seed)
                            .stage(STAGE)?;
                    (
                        Dataset {
                            manifest: None,
                            videos,
                        },
                        seed,
                    )
                }
            };
            Ok((name, data, seed))
        })?;
        let mut table = Table::new(["videos", "frames"]);
        for (name, data, seed) in built {
            let frames: usize = data.videos.iter().map(|v| v.len()).sum();
            table.push(
                &name,
                vec![data.videos.len() as f64, frames as f64],
                STAGE,
                vec![seed],
            );
            self.put_dataset(&name, &data, STAGE, vec![seed])?;
        }
        let mut report = Report::default();
        report.tables.insert("datasets".into(), table);
        Ok(report)
    }

    fn meta_train(&mut self) -> Result<Report> {
        const STAGE: &str = "meta-train";
        let c = self.config.clone();
        let (train_tasks, _) = self.task_splits()?;
        // the classifier covers the training universe; colors become dense indices
        let mut universe = c.data.train_colors.clone();
        universe.sort_unstable();
        let dense: Vec<TaskSpec> = train_tasks
            .iter()
            .map(|t| TaskSpec {
                target_colors: t
                    .target_colors
                    .iter()
                    .map(|c| universe.binary_search(c).unwrap_or(usize::MAX))
                    .collect(),
                distractor_colors: t.distractor_colors.clone(),
            })
            .collect();
        let mut jobs = Vec::new();
        for r in 0..c.data.replicates {
            let videos = self.videos(&format!("train_r{r}"))?;
            jobs.push((r, true, videos.clone()));
            jobs.push((r, false, videos));
        }
        let trained = self.fan_out(jobs, |(r, meta, videos)| {
            if meta {
                let cfg = c.meta_config(r);
                let m = meta_train(&videos, &cfg).stage(STAGE)?;
                Ok((
                    format!("localizer_r{r}"),
                    Checkpoint::Localizer(m),
                    cfg.seed,
                ))
            } else {
                let cfg = c.baseline_config(r);
                let m = &c.localizer.meta;
                let b = baseline_train(
                    &videos,
                    &dense,
                    universe.len(),
                    m.hidden,
                    m.embed_dim,
                    m.snippet_len,
                    &cfg,
                )
                .stage(STAGE)?;
                Ok((format!("baseline_r{r}"), Checkpoint::Baseline(b), cfg.seed))
            }
        })?;
        let mut table = Table::new(["parameters"]);
        for (name, model, seed) in trained {
            let n = match &model {
                Checkpoint::Localizer(m) => m.theta.len(),
                Checkpoint::Baseline(b) => b.params.len(),
                _ => 0,
            };
            table.push(&name, vec![n as f64], STAGE, vec![seed]);
            self.put_model(&name, &model, STAGE, vec![seed])?;
        }
        let mut report = Report::default();
        report.tables.insert("models".into(), table);
        Ok(report)
    }

    fn localize(&mut self) -> Result<Report> {
        const STAGE: &str = "localize";
        let c = self.config.clone();
        let steps = c.localizer.finetune_steps;
        let k = c.data.k;
        let mut jobs = Vec::new();
        for r in 0..c.data.replicates {
            jobs.push((
                r,
                self.localizer(&format!("localizer_r{r}"))?,
                formats::load_baseline(&self.store.path(&format!("baseline_r{r}"))?)?,
                self.videos(&format!("train_r{r}"))?,
                self.videos(&format!("validation_r{r}"))?,
                self.videos(&format!("meta_test_r{r}"))?,
            ));
        }
        let pool = self.videos("pool")?;
        let scores = self.fan_out(jobs, |(r, meta, base, train, val, test)| {
            let init_cfg = MetaTrainConfig {
                iters: 0,
                ..c.meta_config(r)
            };
            let init = meta_train(&train, &init_cfg).stage(STAGE)?;
            let row = |m: &MetaModel| -> Result<[f64; 4]> {
                let v = evaluate_meta(m, &val, steps).stage(STAGE)?;
                let t = evaluate_meta(m, &test, steps).stage(STAGE)?;
                Ok([v.miou, t.miou, v.accuracy, t.accuracy])
            };
            let meta_row = row(&meta)?;
            let init_row = row(&init)?;
            let v = evaluate_baseline(&base, &val, k).stage(STAGE)?;
            let t = evaluate_baseline(&base, &test, k).stage(STAGE)?;
            let data_seeds = vec![
                c.seed(offsets::TRAIN_DATA + r as u64),
                c.seed(offsets::VALIDATION_DATA + r as u64),
                c.seed(offsets::META_TEST_DATA + r as u64),
            ];
            Ok((
                r,
                meta_row,
                [v.miou, t.miou, v.accuracy, t.accuracy],
                init_row,
                meta.seed,
                base.seed,
                data_seeds,
            ))
        })?;

        let mut table = Table::new([
            "miou_validation",
            "miou_meta_test",
            "accuracy_validation",
            "accuracy_meta_test",
        ]);
        let mut sums = [[0.0; 4]; 3];
        let mut all_seeds = Vec::new();
        for (r, m, b, i, meta_seed, base_seed, data_seeds) in &scores {
            let mut seeds = vec![*meta_seed];
            seeds.extend(data_seeds);
            table.push(format!("{META_ROW} r{r}"), m.to_vec(), STAGE, seeds.clone());
            table.push(format!("{INIT_ROW} r{r}"), i.to_vec(), STAGE, seeds.clone());
            seeds[0] = *base_seed;
            table.push(format!("{CLASSIFIER_ROW} r{r}"), b.to_vec(), STAGE, seeds);
            for (s, row) in sums.iter_mut().zip([m, b, i]) {
                for (a, x) in s.iter_mut().zip(row) {
                    *a += x;
                }
            }
            all_seeds.push(*meta_seed);
            all_seeds.extend(data_seeds);
        }
        all_seeds.sort_unstable();
        all_seeds.dedup();
        let n = scores.len() as f64;
        for (label, s) in [META_ROW, CLASSIFIER_ROW, INIT_ROW].into_iter().zip(sums) {
            table.push(
                label,
                s.iter().map(|x| x / n).collect(),
                STAGE,
                all_seeds.clone(),
            );
        }

        // auxiliary pool labeled by the first replicate's localizer
        let meta = self.localizer("localizer_r0")?;
        let relabeled = relabel_videos(&meta, &pool[0], &pool[1..], steps, c.localizer.decoding)
            .stage(STAGE)?;
        let (mut agree, mut total, mut miou) = (0usize, 0usize, 0.0);
        for (p, gt) in relabeled.iter().zip(&pool[1..]) {
            agree += p
                .frame_labels
                .iter()
                .zip(&gt.frame_labels)
                .filter(|(a, b)| a == b)
                .count();
            total += gt.len();
            miou += localization_metrics(&gt.frame_labels, &p.frame_labels, k)
                .stage(STAGE)?
                .miou;
        }
        let seeds = vec![meta.seed, c.seed(offsets::POOL_DATA)];
        let mut agreement = Table::new(["frame_agreement", "miou"]);
        agreement.push(
            "pool",
            vec![
                agree as f64 / total.max(1) as f64,
                miou / relabeled.len().max(1) as f64,
            ],
            STAGE,
            seeds.clone(),
        );
        let mut videos = vec![pool[0].clone()];
        videos.extend(relabeled);
        self.put_dataset(
            "pool_localized",
            &Dataset {
                manifest: None,
                videos,
            },
            STAGE,
            seeds,
        )?;

        let mut report = Report::default();
        report.tables.insert("table_i_localization".into(), table);
        report.tables.insert("pool_localization".into(), agreement);
        Ok(report)
    }

    fn train_reward(&mut self) -> Result<Report> {
        const STAGE: &str = "train-reward";
        let c = self.config.clone();
        let pool = self.videos("pool")?;
        let localized = self.videos("pool_localized")?;
        let heldout = self.videos("heldout")?;
        let k = c.data.rl_task.k();
        let clean = c.pair_config();
        let noisy = PairConfig {
            flip_prob: c.reward.noise_flip,
            ..clean.clone()
        };
        let mut jobs: Vec<(
            String,
            &[LabeledVideo],
            Activity,
            Option<usize>,
            &PairConfig,
        )> = Vec::new();
        for s in 0..k {
            let a = Activity::Subtask(s);
            jobs.push((format!("gt_seg_s{s}"), &pool, a, Some(s), &clean));
            jobs.push((format!("maml_seg_s{s}"), &localized, a, Some(s), &clean));
            jobs.push((format!("single_demo_s{s}"), &pool[..1], a, Some(s), &clean));
            jobs.push((format!("gt_seg_noisy_s{s}"), &pool, a, Some(s), &noisy));
        }
        jobs.push(("unsegmented".into(), &pool, Activity::Any, None, &clean));
        let train_cfg = c.reward_config();
        let models = self.fan_out(jobs, |(name, videos, activity, sub, pairs_cfg)| {
            let pairs = sample_order_pairs(videos, activity, pairs_cfg).stage(STAGE)?;
            let model = train_reward(videos, &pairs, sub, &train_cfg).stage(STAGE)?;
            Ok((name, model))
        })?;
        let seeds = vec![clean.seed, train_cfg.seed];
        let mut by_name = BTreeMap::new();
        for (name, model) in models {
            self.put_model(
                &format!("reward_{name}"),
                &Checkpoint::Reward(model.clone()),
                STAGE,
                seeds.clone(),
            )?;
            by_name.insert(name, model);
        }

        let eval_seed = c.seed(offsets::EVAL_PAIRS);
        let mut table = Table::new(["pair_accuracy", "spearman"]);
        let mut noise = Table::new(["clean_accuracy", "noisy_accuracy", "accuracy_drop"]);
        let mut fig3 = Curves {
            x_label: "frame".into(),
            y_label: "accumulated reward".into(),
            stage: STAGE.into(),
            seeds: vec![clean.seed, train_cfg.seed, c.seed(offsets::HELDOUT_DATA)],
            ..Curves::default()
        };
        let row_seeds = vec![clean.seed, train_cfg.seed, eval_seed];
        for s in 0..k {
            let eval_cfg = PairConfig {
                n: c.reward.eval_pairs,
                seed: eval_seed,
                flip_prob: 0.0,
                ..clean.clone()
            };
            let eval_pairs =
                sample_order_pairs(&heldout, Activity::Subtask(s), &eval_cfg).stage(STAGE)?;
            let clips: Vec<_> = heldout
                .iter()
                .filter_map(|v| v.segment(s).map(|r| &v.frames[r]))
                .collect();
            let mut acc_of = BTreeMap::new();
            for arm in [
                "gt_seg",
                "maml_seg",
                "single_demo",
                "gt_seg_noisy",
                "unsegmented",
            ] {
                let model = if arm == "unsegmented" {
                    &by_name[arm]
                } else {
                    &by_name[&format!("{arm}_s{s}")]
                };
                let acc = pair_accuracy(model, &heldout, &eval_pairs).stage(STAGE)?;
                let mut rho = 0.0;
                for clip in &clips {
                    rho += progress_monotonicity(model, clip).stage(STAGE)?;
                }
                rho /= clips.len().max(1) as f64;
                table.push(
                    format!("{arm} subtask {s}"),
                    vec![acc, rho],
                    STAGE,
                    row_seeds.clone(),
                );
                acc_of.insert(arm, acc);
                if arm != "gt_seg_noisy" {
                    if let Some(r) = heldout[0].segment(s) {
                        let curve =
                            progress_curve(model, &heldout[0].frames[r.clone()]).stage(STAGE)?;
                        let points = curve
                            .iter()
                            .enumerate()
                            .map(|(i, &y)| ((r.start + i) as f64, y))
                            .collect();
                        fig3.series.push(Series {
                            name: format!("{arm} subtask {s}"),
                            points,
                        });
                    }
                }
            }
            let (a, b) = (acc_of["gt_seg"], acc_of["gt_seg_noisy"]);
            noise.push(
                format!("subtask {s}"),
                vec![a, b, a - b],
                STAGE,
                row_seeds.clone(),
            );
        }
        let mut report = Report::default();
        report.tables.insert("reward_models".into(), table);
        report.tables.insert("reward_noise".into(), noise);
        report.curves.insert("fig3_accumulated_reward".into(), fig3);
        Ok(report)
    }

    fn train_policy(&mut self) -> Result<Report> {
        const STAGE: &str = "train-policy";
        let c = self.config.clone();
        let k = c.data.rl_task.k();
        let rl = c.rl_config();
        let pool = self.videos("pool")?;
        let mut jobs = Vec::new();
        for (arm, label) in ARMS {
            for s in 0..k {
                let reward = match arm {
                    "gt_rewards" => None,
                    "unsegmented" => Some(self.reward("reward_unsegmented")?),
                    _ => Some(self.reward(&format!("reward_{arm}_s{s}"))?),
                };
                let demos = if rl.bc.steps > 0 {
                    demo_pairs(&c.env, &pool[0], s)
                } else {
                    Vec::new()
                };
                jobs.push((arm, label, s, reward, demos));
            }
        }
        let trained = self.fan_out(jobs, |(arm, label, s, reward, demos)| {
            let source = match &reward {
                None => RewardSource::GroundTruthDense,
                Some(model) => RewardSource::Inferred {
                    model,
                    scale: rl.reward_scale,
                },
            };
            let t: TrainedPolicy = train_policy(
                &c.env,
                &c.data.rl_task,
                s,
                predecessor(&c.data.demo_order, s),
                source,
                &demos,
                &rl,
            )
            .stage(STAGE)?;
            Ok((arm, label, s, t))
        })?;
        let seeds = vec![rl.seed];
        let mut fig4 = Curves {
            x_label: "iteration".into(),
            y_label: "probe success rate".into(),
            stage: STAGE.into(),
            seeds: seeds.clone(),
            ..Curves::default()
        };
        let mut table = Table::new(["final_probe_success"]);
        for (arm, label, s, t) in trained {
            let points = t
                .curve
                .iter()
                .enumerate()
                .map(|(i, &y)| ((i + 1) as f64, y))
                .collect();
            fig4.series.push(Series {
                name: format!("{label} subtask {s}"),
                points,
            });
            table.push(
                format!("{label} subtask {s}"),
                vec![t.curve.last().copied().unwrap_or(f64::NAN)],
                STAGE,
                seeds.clone(),
            );
            self.put_model(
                &format!("policy_{arm}_s{s}"),
                &Checkpoint::Policy(t.policy),
                STAGE,
                seeds.clone(),
            )?;
        }
        let mut report = Report::default();
        report.curves.insert("fig4_learning_curves".into(), fig4);
        report.tables.insert("policy_training".into(), table);
        Ok(report)
    }

    fn evaluate(&mut self) -> Result<Report> {
        const STAGE: &str = "evaluate";
        let c = self.config.clone();
        let k = c.data.rl_task.k();
        let seed = c.seed(offsets::EVALUATION);
        let trials = c.rl.eval_trials;
        let mut jobs = Vec::new();
        for (arm, label) in ARMS {
            let policies = (0..k)
                .map(|s| formats::load_policy(&self.store.path(&format!("policy_{arm}_s{s}"))?))
                .collect::<Result<Vec<_>>>()?;
            jobs.push((label, policies));
        }
        let rows = self.fan_out(jobs, |(label, policies)| {
            let mut values = Vec::with_capacity(k + 1);
            for (s, p) in policies.iter().enumerate() {
                values.push(
                    evaluate_policy(
                        p,
                        &c.env,
                        &c.data.rl_task,
                        s,
                        predecessor(&c.data.demo_order, s),
                        trials,
                        seed,
                    )
                    .stage(STAGE)?,
                );
            }
            let controllers: Vec<&dyn Controller> = c
                .data
                .demo_order
                .iter()
                .map(|&s| &policies[s] as &dyn Controller)
                .collect();
            let seq = execute_sequence(
                &controllers,
                &c.data.demo_order,
                &c.env,
                &c.data.rl_task,
                trials,
                seed,
            )
            .stage(STAGE)?;
            values.push(seq.overall);
            Ok((label, values))
        })?;
        let mut columns: Vec<String> = (0..k).map(|s| format!("success_subtask{s}")).collect();
        columns.push("success_sequence".into());
        let mut table = Table::new(columns);
        let seeds = vec![c.seed(offsets::POLICY), seed];
        for (label, values) in rows {
            table.push(label, values, STAGE, seeds.clone());
        }
        let mut report = Report::default();
        report.tables.insert("table_ii_rl".into(), table);
        Ok(report)
    }
}

fn fragment_name(stage: Stage) -> String {
    format!("report_{}", stage.name().replace('-', "_"))
}
