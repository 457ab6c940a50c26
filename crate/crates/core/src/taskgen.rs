//! Task universes, dataset generation and snippet slicing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reacher::{rollout_expert, EnvConfig, Frame, Target};

/// Per-frame or per-snippet label; `None` is "none of the above".
pub type Label = Option<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub target_colors: Vec<usize>,
    pub distractor_colors: Vec<usize>,
}

impl TaskSpec {
    pub fn k(&self) -> usize {
        self.target_colors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_colors.is_empty() {
            return Err(Error::Config("task has no target colors".into()));
        }
        if self
            .target_colors
            .iter()
            .any(|c| self.distractor_colors.contains(c))
        {
            return Err(Error::Config("target and distractor colors overlap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    MetaTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub tasks: Vec<TaskSpec>,
    pub videos_per_task: usize,
    pub seed: u64,
    pub env: EnvConfig,
}

/// One expert video with per-frame ground truth (or predicted) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideo {
    pub frames: Vec<Frame>,
    pub frame_labels: Vec<Label>,
    /// `[θ1, θ2, ω1, ω2]` per frame.
    pub states: Vec<[f32; 4]>,
    /// Applied torques per frame.
    pub actions: Vec<[f32; 2]>,
    pub targets: Vec<Target>,
    pub task_id: usize,
    /// Subtask label indices in visiting order.
    pub order: Vec<usize>,
}

impl LabeledVideo {
    pub fn new(
        frames: Vec<Frame>,
        frame_labels: Vec<Label>,
        states: Vec<[f32; 4]>,
        actions: Vec<[f32; 2]>,
        targets: Vec<Target>,
        task_id: usize,
        order: Vec<usize>,
    ) -> Self {
        Self {
            frames,
            frame_labels,
            states,
            actions,
            targets,
            task_id,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Majority label of each complete snippet of length `s`.
    pub fn snippet_labels(&self, s: usize) -> Vec<Label> {
        self.frame_labels
            .chunks_exact(s.max(1))
            .map(majority_label)
            .collect()
    }

    /// Frames between the first and last frame carrying `label`, inclusive.
    pub fn segment(&self, label: usize) -> Option<core::ops::Range<usize>> {
        let first = self.frame_labels.iter().position(|&l| l == Some(label))?;
        let last = self.frame_labels.iter().rposition(|&l| l == Some(label))?;
        Some(first..last + 1)
    }
}

/// Most frequent label; ties go to the label that appears first.
pub fn majority_label(labels: &[Label]) -> Label {
    let mut best: Label = None;
    let mut best_count = 0;
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            continue;
        }
        let count = labels.iter().filter(|&m| m == l).count();
        if count > best_count {
            best = *l;
            best_count = count;
        }
    }
    best
}

/// `S` contiguous frames of one video.
#[derive(Debug, Clone, Copy)]
pub struct Snippet<'a> {
    pub frames: &'a [Frame],
    pub task_id: usize,
    pub start: usize,
}

/// Non-overlapping snippets at stride `s`; a trailing partial snippet is dropped.
pub fn snippet_slice(video: &LabeledVideo, s: usize) -> Result<Vec<(Snippet<'_>, Label)>> {
    if s == 0 {
        return Err(Error::Config("snippet length must be at least 1".into()));
    }
    Ok(video
        .frames
        .chunks_exact(s)
        .zip(video.frame_labels.chunks_exact(s))
        .enumerate()
        .map(|(i, (frames, labels))| {
            (
                Snippet {
                    frames,
                    task_id: video.task_id,
                    start: i * s,
                },
                majority_label(labels),
            )
        })
        .collect())
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            break;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

fn tasks_for(colors: &[usize], k: usize, n_shown: usize) -> Vec<TaskSpec> {
    let mut sorted = colors.to_vec();
    sorted.sort_unstable();
    combinations(&sorted, k)
        .into_iter()
        .map(|target_colors| {
            let distractor_colors = sorted
                .iter()
                .filter(|c| !target_colors.contains(c))
                .take(n_shown.saturating_sub(k))
                .copied()
                .collect();
            TaskSpec {
                target_colors,
                distractor_colors,
            }
        })
        .collect()
}

/// Every `k`-combination of each color universe, in lexicographic order.
///
/// Distractors are the lowest remaining colors of the same universe, enough
/// to show `n_shown` targets per scene.
pub fn sample_task_splits(
    train_colors: &[usize],
    meta_colors: &[usize],
    k: usize,
    n_shown: usize,
) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>)> {
    if train_colors.iter().any(|c| meta_colors.contains(c)) {
        return Err(Error::Config(
            "train and meta-test color sets overlap".into(),
        ));
    }
    if k == 0 || train_colors.len() < k || meta_colors.len() < k {
        return Err(Error::Config(format!(
            "each color universe needs at least {k} colors"
        )));
    }
    Ok((
        tasks_for(train_colors, k, n_shown),
        tasks_for(meta_colors, k, n_shown),
    ))
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..k).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..k).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..k).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
    out
}

/// SplitMix64 finalizer used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const GENERATION_ATTEMPTS: u64 = 5;

/// Video `index` of task `task_idx`: orders cycle through permutations, seeds
/// derive from the manifest seed, failed rollouts are retried with new seeds.
pub fn generate_video(
    manifest: &DatasetManifest,
    task_idx: usize,
    index: usize,
) -> Result<LabeledVideo> {
    let task = &manifest.tasks[task_idx];
    let orders = permutations(task.k());
    let order = &orders[index % orders.len()];
    let base = mix_seed(mix_seed(manifest.seed, task_idx as u64), index as u64);
    let mut last = None;
    for attempt in 0..GENERATION_ATTEMPTS {
        match rollout_expert(&manifest.env, task, order, mix_seed(base, attempt)) {
            Ok(mut v) => {
                v.task_id = task_idx;
                return Ok(v);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Generation(format!(
        "task {task_idx} ({:?}) video {index}: {}",
        task.target_colors,
        last.unwrap()
    )))
}

/// `n` videos of one task that all follow `order`.
pub fn generate_ordered(
    env: &EnvConfig,
    task: &TaskSpec,
    task_id: usize,
    order: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledVideo>> {
    env.validate()?;
    task.validate()?;
    (0..n)
        .map(|i| {
            let base = mix_seed(seed, i as u64);
            let mut last = None;
            for attempt in 0..GENERATION_ATTEMPTS {
                match rollout_expert(env, task, order, mix_seed(base, attempt)) {
                    Ok(mut v) => {
                        v.task_id = task_id;
                        return Ok(v);
                    }
                    Err(e) => last = Some(e),
                }
            }
            Err(Error::Generation(format!(
                "ordered video {i}: {}",
                last.unwrap()
            )))
        })
        .collect()
}

pub fn generate_dataset(manifest: &DatasetManifest) -> Result<Vec<LabeledVideo>> {
    manifest.env.validate()?;
    for t in &manifest.tasks {
        t.validate()?;
    }
    let mut out = Vec::with_capacity(manifest.tasks.len() * manifest.videos_per_task);
    for t in 0..manifest.tasks.len() {
        for i in 0..manifest.videos_per_task {
            out.push(generate_video(manifest, t, i)?);
        }
    }
    Ok(out)
}
