//! One-shot activity localization.
//!
//! A snippet is classified by embedding each frame with a small tanh network,
//! mean-pooling the embeddings and applying a linear head. Initial parameters
//! are meta-learned (MAML exact / first-order, or Reptile) so that a few SGD
//! steps on one segmented demonstration yield a dense snippet classifier for
//! that demonstration's subtasks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    backward, forward_trace, init_params, meta_grad, softmax_ce, Activation, NetSpec, Objective,
    OptimizerState, ParamVector, Trace,
};
use crate::error::{Error, Result};
use crate::normalize::Normalization;
use crate::reacher::Frame;
use crate::scalar::Scalar;
use crate::taskgen::{mix_seed, permutations, snippet_slice, Label, LabeledVideo, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerSpec {
    /// Flattened frame → embedding.
    pub embed: NetSpec,
    /// Width of the linear head.
    pub classes: usize,
    pub snippet_len: usize,
}

impl LocalizerSpec {
    pub fn new(
        frame_len: usize,
        hidden: usize,
        embed_dim: usize,
        classes: usize,
        snippet_len: usize,
    ) -> Result<Self> {
        let spec = Self {
            embed: NetSpec::uniform(&[frame_len, hidden, embed_dim], Activation::Tanh)?,
            classes,
            snippet_len,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.embed.validate()?;
        if self.classes == 0 || self.snippet_len == 0 {
            return Err(Error::Config(
                "localizer needs at least one class and snippet frame".into(),
            ));
        }
        Ok(())
    }

    pub fn embed_width(&self) -> usize {
        self.embed.output_width()
    }

    pub fn head(&self) -> NetSpec {
        NetSpec::new(vec![self.embed_width(), self.classes], vec![])
            .expect("head widths are positive")
    }

    pub fn embed_params(&self) -> usize {
        self.embed.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.embed.param_count() + self.head().param_count()
    }

    pub fn fingerprint(&self) -> u64 {
        mix_seed(
            self.embed.fingerprint(),
            mix_seed(self.classes as u64, self.snippet_len as u64),
        )
    }

    /// Embedding and head initialized independently from `seed`.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut values = init_params(&self.embed, seed).values;
        values.extend(init_params(&self.head(), mix_seed(seed, 0x4ead)).values);
        ParamVector {
            values,
            spec_hash: self.fingerprint(),
        }
    }

    /// Same embedding, head resized to `classes`.
    pub fn with_classes(&self, classes: usize) -> Self {
        Self {
            classes,
            ..self.clone()
        }
    }

    fn check(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "localizer needs {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }
}

struct Pooled<S> {
    traces: Vec<Trace<S>>,
    pooled: Vec<S>,
}

fn pooled_embedding<S: Scalar>(
    spec: &LocalizerSpec,
    embed: &[S],
    inputs: &[Vec<f64>],
) -> Pooled<S> {
    let e = spec.embed_width();
    let mut pooled = vec![S::zero(); e];
    let mut traces = Vec::with_capacity(inputs.len());
    for x in inputs {
        let t = forward_trace::<S, f64>(&spec.embed, embed, x);
        for (p, &v) in pooled.iter_mut().zip(t.output()) {
            *p += v;
        }
        traces.push(t);
    }
    let inv = 1.0 / inputs.len() as f64;
    pooled.iter_mut().for_each(|p| *p = p.scale(inv));
    Pooled { traces, pooled }
}

fn check_frames(spec: &LocalizerSpec, frames: &[Frame]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Empty("snippet has no frames".into()));
    }
    if let Some(f) = frames
        .iter()
        .find(|f| f.pixels.len() != spec.embed.input_width())
    {
        return Err(Error::Shape(format!(
            "frame has {} values, localizer expects {}",
            f.pixels.len(),
            spec.embed.input_width()
        )));
    }
    Ok(())
}

/// Mean softmax cross entropy over labeled snippets.
pub struct SnippetObjective<'a> {
    spec: &'a LocalizerSpec,
    inputs: Vec<(Vec<Vec<f64>>, usize)>,
}

impl<'a> SnippetObjective<'a> {
    pub fn new(
        spec: &'a LocalizerSpec,
        norm: &Normalization,
        items: &[(&[Frame], usize)],
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("no labeled snippets".into()));
        }
        let mut inputs = Vec::with_capacity(items.len());
        for (frames, label) in items {
            check_frames(spec, frames)?;
            if *label >= spec.classes {
                return Err(Error::Shape(format!(
                    "label {label} outside [0, {})",
                    spec.classes
                )));
            }
            inputs.push((frames.iter().map(|f| norm.apply(f)).collect(), *label));
        }
        Ok(Self { spec, inputs })
    }

    /// All snippets of `videos` whose majority label is a class.
    pub fn from_videos(
        spec: &'a LocalizerSpec,
        norm: &Normalization,
        videos: &[&LabeledVideo],
    ) -> Result<Self> {
        let items = labeled_snippets(videos, spec.snippet_len)?;
        Self::new(spec, norm, &items)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

impl Objective for SnippetObjective<'_> {
    fn param_len(&self) -> usize {
        self.spec.param_count()
    }

    fn loss_grad<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)> {
        let ne = self.spec.embed_params();
        let head = self.spec.head();
        let (embed_p, head_p) = params.split_at(ne);
        let mut grad = vec![S::zero(); params.len()];
        let inv_n = 1.0 / self.inputs.len() as f64;
        let mut total = S::zero();
        let mut d_pool = vec![S::zero(); self.spec.embed_width()];
        for (i, (frames, label)) in self.inputs.iter().enumerate() {
            let p = pooled_embedding(self.spec, embed_p, frames);
            let ht = forward_trace::<S, S>(&head, head_p, &p.pooled);
            let (loss, mut d) = softmax_ce(ht.output(), *label);
            if !loss.value().is_finite() {
                return Err(Error::Numeric {
                    index: i,
                    what: format!("snippet loss {}", loss.value()),
                });
            }
            total += loss;
            d.iter_mut().for_each(|v| *v = v.scale(inv_n));
            let (g_embed, g_head) = grad.split_at_mut(ne);
            backward(&head, head_p, &ht, &d, g_head, Some(&mut d_pool));
            let per_frame = 1.0 / frames.len() as f64;
            let d_frame: Vec<S> = d_pool.iter().map(|v| v.scale(per_frame)).collect();
            for t in &p.traces {
                backward(&self.spec.embed, embed_p, t, &d_frame, g_embed, None);
            }
        }
        Ok((total.scale(inv_n), grad))
    }
}

/// `(frames, label)` for every snippet with a class label.
pub fn labeled_snippets<'v>(
    videos: &[&'v LabeledVideo],
    snippet_len: usize,
) -> Result<Vec<(&'v [Frame], usize)>> {
    let mut out = Vec::new();
    for v in videos {
        for (s, l) in snippet_slice(v, snippet_len)? {
            if let Some(l) = l {
                out.push((s.frames, l));
            }
        }
    }
    Ok(out)
}

/// Class logits for one snippet.
pub fn snippet_logits(
    spec: &LocalizerSpec,
    params: &ParamVector,
    norm: &Normalization,
    frames: &[Frame],
) -> Result<Vec<f64>> {
    spec.check(params)?;
    check_frames(spec, frames)?;
    let p = params.to_f64();
    let (embed_p, head_p) = p.split_at(spec.embed_params());
    let inputs: Vec<Vec<f64>> = frames.iter().map(|f| norm.apply(f)).collect();
    let pooled = pooled_embedding::<f64>(spec, embed_p, &inputs).pooled;
    Ok(forward_trace::<f64, f64>(&spec.head(), head_p, &pooled).into_output())
}

/// Mean-pooled embedding of a snippet (the head's input).
pub fn snippet_features(
    spec: &LocalizerSpec,
    params: &ParamVector,
    norm: &Normalization,
    frames: &[Frame],
) -> Result<Vec<f64>> {
    spec.check(params)?;
    check_frames(spec, frames)?;
    let p = params.to_f64();
    let inputs: Vec<Vec<f64>> = frames.iter().map(|f| norm.apply(f)).collect();
    Ok(pooled_embedding::<f64>(spec, &p[..spec.embed_params()], &inputs).pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    MamlExact,
    MamlFirstOrder,
    Reptile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub spec: LocalizerSpec,
    pub theta: ParamVector,
    pub inner_alpha: f64,
    pub trained_with: MetaMode,
    pub normalization: Normalization,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaTrainConfig {
    pub mode: MetaMode,
    pub inner_alpha: f64,
    /// Adam step size for MAML; interpolation rate for Reptile.
    pub meta_lr: f64,
    pub iters: usize,
    pub task_batch: usize,
    /// Inner SGD steps per task for Reptile (MAML always unrolls one).
    pub reptile_inner_steps: usize,
    pub seed: u64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub snippet_len: usize,
    /// Randomly permute class indices per sampled task.
    pub shuffle_labels: bool,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            mode: MetaMode::MamlExact,
            inner_alpha: 0.05,
            meta_lr: 1e-3,
            iters: 300,
            task_batch: 4,
            reptile_inner_steps: 5,
            seed: 7,
            hidden: 64,
            embed_dim: 32,
            snippet_len: 4,
            shuffle_labels: true,
        }
    }
}

impl MetaTrainConfig {
    pub fn reptile() -> Self {
        Self {
            mode: MetaMode::Reptile,
            meta_lr: 0.5,
            ..Self::default()
        }
    }
}

fn group_by_task(videos: &[LabeledVideo]) -> BTreeMap<usize, Vec<&LabeledVideo>> {
    let mut groups: BTreeMap<usize, Vec<&LabeledVideo>> = BTreeMap::new();
    for v in videos {
        groups.entry(v.task_id).or_default().push(v);
    }
    groups
}

fn class_count(videos: &[LabeledVideo]) -> usize {
    videos
        .iter()
        .flat_map(|v| v.frame_labels.iter().flatten())
        .max()
        .map_or(0, |m| m + 1)
}

/// `steps` full-batch SGD steps at the model's inner rate on the demo snippets.
pub fn inner_finetune(meta: &MetaModel, demo: &LabeledVideo, steps: usize) -> Result<ParamVector> {
    let items = labeled_snippets(&[demo], meta.spec.snippet_len)?;
    finetune_from(
        &meta.spec,
        &meta.normalization,
        &meta.theta,
        meta.inner_alpha,
        &items,
        steps,
    )
}

fn finetune_from(
    spec: &LocalizerSpec,
    norm: &Normalization,
    theta: &ParamVector,
    alpha: f64,
    items: &[(&[Frame], usize)],
    steps: usize,
) -> Result<ParamVector> {
    for c in 0..spec.classes {
        if !items.iter().any(|(_, l)| *l == c) {
            return Err(Error::Coverage(c));
        }
    }
    let mut params = theta.clone();
    if steps == 0 {
        return Ok(params);
    }
    let obj = SnippetObjective::new(spec, norm, items)?;
    let mut sgd = OptimizerState::sgd(alpha);
    for _ in 0..steps {
        let (_, g) = obj.loss_grad::<f64>(&params.to_f64())?;
        sgd.apply(&mut params.values, &g)?;
    }
    Ok(params)
}

fn relabeled<'v>(
    video: &'v LabeledVideo,
    snippet_len: usize,
    map: &[usize],
) -> Result<Vec<(&'v [Frame], usize)>> {
    let mut items = labeled_snippets(&[video], snippet_len)?;
    for (_, l) in items.iter_mut() {
        *l = map[*l];
    }
    Ok(items)
}

/// Meta-learns initial localizer parameters from training videos.
///
/// Each iteration samples `task_batch` distinct tasks and, per task, one demo
/// (support) and one different target (query) video.
pub fn meta_train(videos: &[LabeledVideo], config: &MetaTrainConfig) -> Result<MetaModel> {
    let groups = group_by_task(videos);
    if groups.len() < 2 {
        return Err(Error::Sampling(format!(
            "meta-training needs at least 2 tasks, got {}",
            groups.len()
        )));
    }
    if let Some((t, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::Sampling(format!("task {t} has fewer than 2 videos")));
    }
    let classes = class_count(videos);
    let frame_len = videos[0].frames[0].pixels.len();
    let spec = LocalizerSpec::new(
        frame_len,
        config.hidden,
        config.embed_dim,
        classes,
        config.snippet_len,
    )?;
    let normalization = Normalization::fit(videos.iter().flat_map(|v| v.frames.iter()))?;
    let mut theta = spec.init(config.seed);
    let tasks: Vec<&Vec<&LabeledVideo>> = groups.values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x3e7a));
    let mut adam = OptimizerState::adam(config.meta_lr, theta.len());
    let batch = config.task_batch.clamp(1, tasks.len());

    for _ in 0..config.iters {
        let picked = sample(&mut rng, tasks.len(), batch).into_vec();
        let mut pairs = Vec::with_capacity(batch);
        for &t in &picked {
            let vids = tasks[t];
            let s = rng.random_range(0..vids.len());
            let mut q = rng.random_range(0..vids.len() - 1);
            if q >= s {
                q += 1;
            }
            let mut map: Vec<usize> = (0..classes).collect();
            if config.shuffle_labels {
                map.shuffle(&mut rng);
            }
            pairs.push((
                relabeled(vids[s], spec.snippet_len, &map)?,
                relabeled(vids[q], spec.snippet_len, &map)?,
            ));
        }
        match config.mode {
            MetaMode::MamlExact | MetaMode::MamlFirstOrder => {
                let first_order = config.mode == MetaMode::MamlFirstOrder;
                let theta64 = theta.to_f64();
                let mut total = vec![0.0; theta.len()];
                for (support, query) in &pairs {
                    let s = SnippetObjective::new(&spec, &normalization, support)?;
                    let q = SnippetObjective::new(&spec, &normalization, query)?;
                    let (_, g) = meta_grad(&s, &q, &theta64, config.inner_alpha, first_order)?;
                    total.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                adam.apply(&mut theta.values, &total)?;
            }
            MetaMode::Reptile => {
                let mut delta = vec![0.0f64; theta.len()];
                for (support, _) in &pairs {
                    let adapted = finetune_from(
                        &spec,
                        &normalization,
                        &theta,
                        config.inner_alpha,
                        support,
                        config.reptile_inner_steps,
                    )?;
                    for ((d, a), t) in delta.iter_mut().zip(&adapted.values).zip(&theta.values) {
                        *d += (*a as f64) - (*t as f64);
                    }
                }
                let scale = config.meta_lr / pairs.len() as f64;
                for (t, d) in theta.values.iter_mut().zip(&delta) {
                    *t = (*t as f64 + scale * d) as f32;
                }
            }
        }
    }
    Ok(MetaModel {
        spec,
        theta,
        inner_alpha: config.inner_alpha,
        trained_with: config.mode,
        normalization,
        seed: config.seed,
        iterations: config.iters,
    })
}

/// Matching threshold on the maximum softmax probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Disabled,
    At(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub labels: Vec<Label>,
    pub max_probs: Vec<f64>,
}

/// Dense snippet labels; a snippet whose best probability falls below the
/// threshold is labeled `None`. Ties go to the lowest class index.
pub fn localize(
    spec: &LocalizerSpec,
    theta_tau: &ParamVector,
    norm: &Normalization,
    frames: &[Frame],
    threshold: Threshold,
) -> Result<LocalizationResult> {
    spec.check(theta_tau)?;
    let mut labels = Vec::new();
    let mut max_probs = Vec::new();
    for chunk in frames.chunks_exact(spec.snippet_len) {
        let logits = snippet_logits(spec, theta_tau, norm, chunk)?;
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
        let total: f64 = exps.iter().sum();
        let mut best = 0;
        for (i, &e) in exps.iter().enumerate() {
            if e > exps[best] {
                best = i;
            }
        }
        let p = exps[best] / total;
        let keep = match threshold {
            Threshold::Disabled => true,
            Threshold::At(t) => p >= t,
        };
        labels.push(keep.then_some(best));
        max_probs.push(p);
    }
    Ok(LocalizationResult { labels, max_probs })
}

/// Broadcast snippet labels back onto frames; trailing frames take `None`.
pub fn frame_labels_from_snippets(
    snippet_labels: &[Label],
    snippet_len: usize,
    n_frames: usize,
) -> Vec<Label> {
    let mut out: Vec<Label> = snippet_labels
        .iter()
        .flat_map(|&l| core::iter::repeat_n(l, snippet_len))
        .take(n_frames)
        .collect();
    out.resize(n_frames, None);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            lr: 1e-3,
            batch: 32,
            seed: 11,
        }
    }
}

/// Classifier over every color of the training universe; its pooled
/// embedding serves as the feature layer for nearest-snippet matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub spec: LocalizerSpec,
    pub params: ParamVector,
    pub normalization: Normalization,
    pub seed: u64,
}

impl BaselineModel {
    pub fn features(&self, frames: &[Frame]) -> Result<Vec<f64>> {
        snippet_features(&self.spec, &self.params, &self.normalization, frames)
    }
}

/// Trains the all-colors classifier with Adam on softmax cross entropy.
/// Snippets are labeled by the color being pursued.
pub fn baseline_train(
    videos: &[LabeledVideo],
    tasks: &[TaskSpec],
    all_colors: usize,
    hidden: usize,
    embed_dim: usize,
    snippet_len: usize,
    config: &BaselineConfig,
) -> Result<BaselineModel> {
    let mut items: Vec<(&[Frame], usize)> = Vec::new();
    for v in videos {
        let task = tasks
            .get(v.task_id)
            .ok_or_else(|| Error::Config(format!("video refers to unknown task {}", v.task_id)))?;
        for (s, l) in snippet_slice(v, snippet_len)? {
            if let Some(l) = l {
                let color = task.target_colors[l];
                if color >= all_colors {
                    return Err(Error::Config(format!(
                        "color {color} outside the {all_colors}-color universe"
                    )));
                }
                items.push((s.frames, color));
            }
        }
    }
    for c in 0..all_colors {
        if !items.iter().any(|(_, l)| *l == c) {
            return Err(Error::Coverage(c));
        }
    }
    let frame_len = videos[0].frames[0].pixels.len();
    let spec = LocalizerSpec::new(frame_len, hidden, embed_dim, all_colors, snippet_len)?;
    let normalization = Normalization::fit(videos.iter().flat_map(|v| v.frames.iter()))?;
    let mut params = spec.init(config.seed);
    let mut adam = OptimizerState::adam(config.lr, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0xba5e));
    let batch = config.batch.clamp(1, items.len());
    for _ in 0..config.steps {
        let picked: Vec<(&[Frame], usize)> = sample(&mut rng, items.len(), batch)
            .into_iter()
            .map(|i| items[i])
            .collect();
        let obj = SnippetObjective::new(&spec, &normalization, &picked)?;
        let (_, g) = obj.loss_grad::<f64>(&params.to_f64())?;
        adam.apply(&mut params.values, &g)?;
    }
    Ok(BaselineModel {
        spec,
        params,
        normalization,
        seed: config.seed,
    })
}

/// Each target snippet takes the label of its nearest demo snippet
/// (Euclidean); ties go to the earlier demo snippet.
pub fn baseline_localize(demo: &[(Vec<f64>, usize)], targets: &[Vec<f64>]) -> LocalizationResult {
    let labels = targets
        .iter()
        .map(|t| {
            let mut best: Option<(f64, usize)> = None;
            for (f, l) in demo {
                let d: f64 = f.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, *l));
                }
            }
            best.map(|(_, l)| l)
        })
        .collect::<Vec<_>>();
    let max_probs = vec![1.0; labels.len()];
    LocalizationResult { labels, max_probs }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` for classes absent from both label sequences.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

/// Accuracy, per-class IoU and mIoU (mean over classes present in `gt`).
pub fn localization_metrics(gt: &[Label], pred: &[Label], k: usize) -> Result<Metrics> {
    if gt.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} ground-truth labels vs {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    let n = gt.len();
    let correct = gt
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.is_some() && g == p)
        .count();
    let accuracy = if n == 0 {
        0.0
    } else {
        correct as f64 / n as f64
    };
    let mut inter = vec![0usize; k];
    let mut union = vec![0usize; k];
    let mut in_gt = vec![false; k];
    for (g, p) in gt.iter().zip(pred) {
        for c in 0..k {
            let (ig, ip) = (*g == Some(c), *p == Some(c));
            if ig && ip {
                inter[c] += 1;
            }
            if ig || ip {
                union[c] += 1;
            }
            in_gt[c] |= ig;
        }
    }
    let per_class_iou: Vec<Option<f64>> = (0..k)
        .map(|c| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect();
    let present: Vec<f64> = (0..k)
        .filter(|&c| in_gt[c])
        .filter_map(|c| per_class_iou[c])
        .collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(Metrics {
        accuracy,
        per_class_iou,
        miou,
    })
}

/// Mean scores over every (demo, query) pair of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub miou: f64,
    pub accuracy: f64,
    pub queries: usize,
}

/// Every video of a task serves once as the demo; the rest are its queries.
fn demo_and_queries(videos: &[LabeledVideo]) -> Vec<(&LabeledVideo, Vec<&LabeledVideo>)> {
    let mut out = Vec::new();
    for group in group_by_task(videos).into_values().filter(|v| v.len() >= 2) {
        for (i, demo) in group.iter().enumerate() {
            let queries = group
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| *q)
                .collect();
            out.push((*demo, queries));
        }
    }
    out
}

fn score(pairs: &[(Vec<Label>, Vec<Label>)], k: usize) -> Result<SplitScore> {
    let mut miou = 0.0;
    let mut acc = 0.0;
    for (gt, pred) in pairs {
        let m = localization_metrics(gt, pred, k)?;
        miou += m.miou;
        acc += m.accuracy;
    }
    let n = pairs.len().max(1) as f64;
    Ok(SplitScore {
        miou: miou / n,
        accuracy: acc / n,
        queries: pairs.len(),
    })
}

/// Per task and demo, fine-tune on the demo and localize the other videos.
pub fn evaluate_meta(
    meta: &MetaModel,
    videos: &[LabeledVideo],
    finetune_steps: usize,
) -> Result<SplitScore> {
    let k = meta.spec.classes;
    let mut pairs = Vec::new();
    for (demo, queries) in demo_and_queries(videos) {
        let tuned = inner_finetune(meta, demo, finetune_steps)?;
        for q in queries {
            let r = localize(
                &meta.spec,
                &tuned,
                &meta.normalization,
                &q.frames,
                Threshold::Disabled,
            )?;
            pairs.push((q.snippet_labels(meta.spec.snippet_len), r.labels));
        }
    }
    score(&pairs, k)
}

/// How snippet predictions become labels when relabeling videos.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    /// Per-snippet argmax, optionally thresholded.
    Independent(Threshold),
    /// Each class occupies at most one contiguous run.
    Contiguous,
}

/// Highest log-probability labeling in which every class forms at most one
/// contiguous run, in any class order.
pub fn contiguous_decode(log_probs: &[Vec<f64>]) -> Result<Vec<usize>> {
    let Some(first) = log_probs.first() else {
        return Ok(Vec::new());
    };
    let k = first.len();
    if k == 0 || log_probs.iter().any(|r| r.len() != k) {
        return Err(Error::Shape(
            "log-probability rows must share a positive width".into(),
        ));
    }
    let n = log_probs.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        // score[j]: best total with the current snippet in run j of `perm`
        let mut score: Vec<f64> = perm.iter().map(|&c| log_probs[0][c]).collect();
        let mut back = vec![vec![0usize; k]; n];
        for t in 1..n {
            let mut next = vec![f64::NEG_INFINITY; k];
            let mut run_best = (f64::NEG_INFINITY, 0usize);
            for j in 0..k {
                if score[j] > run_best.0 {
                    run_best = (score[j], j);
                }
                next[j] = run_best.0 + log_probs[t][perm[j]];
                back[t][j] = run_best.1;
            }
            score = next;
        }
        let (mut j, total) =
            score
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                );
        if best.as_ref().is_some_and(|b| b.0 >= total) {
            continue;
        }
        let mut labels = vec![0usize; n];
        for t in (0..n).rev() {
            labels[t] = perm[j];
            j = back[t][j];
        }
        best = Some((total, labels));
    }
    let (total, labels) = best.expect("at least one permutation");
    if !total.is_finite() {
        return Err(Error::Numeric {
            index: 0,
            what: "log-probabilities".into(),
        });
    }
    Ok(labels)
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(z.iter().map(|&v| libm::exp(v - m)).sum::<f64>());
    z.iter().map(|&v| v - lse).collect()
}

/// Copies of `videos` whose frame labels come from the localizer fine-tuned
/// on `demo`; frames past the last full snippet are unlabeled.
pub fn relabel_videos(
    meta: &MetaModel,
    demo: &LabeledVideo,
    videos: &[LabeledVideo],
    finetune_steps: usize,
    decoding: Decoding,
) -> Result<Vec<LabeledVideo>> {
    let tuned = inner_finetune(meta, demo, finetune_steps)?;
    let s = meta.spec.snippet_len;
    videos
        .iter()
        .map(|v| {
            let labels: Vec<Label> = match decoding {
                Decoding::Independent(threshold) => {
                    localize(
                        &meta.spec,
                        &tuned,
                        &meta.normalization,
                        &v.frames,
                        threshold,
                    )?
                    .labels
                }
                Decoding::Contiguous => {
                    let lp = v
                        .frames
                        .chunks_exact(s)
                        .map(|c| {
                            snippet_logits(&meta.spec, &tuned, &meta.normalization, c)
                                .map(|z| log_softmax(&z))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    contiguous_decode(&lp)?.into_iter().map(Some).collect()
                }
            };
            let mut out = v.clone();
            out.frame_labels = frame_labels_from_snippets(&labels, s, v.len());
            Ok(out)
        })
        .collect()
}

/// Nearest-demo-snippet matching in the baseline's feature space.
pub fn evaluate_baseline(
    model: &BaselineModel,
    videos: &[LabeledVideo],
    k: usize,
) -> Result<SplitScore> {
    let s = model.spec.snippet_len;
    let mut pairs = Vec::new();
    for (demo, queries) in demo_and_queries(videos) {
        let mut demo_feats = Vec::new();
        for (snip, l) in snippet_slice(demo, s)? {
            if let Some(l) = l {
                demo_feats.push((model.features(snip.frames)?, l));
            }
        }
        for q in queries {
            let feats = q
                .frames
                .chunks_exact(s)
                .map(|c| model.features(c))
                .collect::<Result<Vec<_>>>()?;
            let r = baseline_localize(&demo_feats, &feats);
            pairs.push((q.snippet_labels(s), r.labels));
        }
    }
    score(&pairs, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::finite_diff;
    use crate::reacher::Frame;
    #[test]
    fn contiguous_decode_merges_stray_snippets() {
        let lp = |a: f64| vec![libm::log(a), libm::log(1.0 - a)];
        let rows = vec![
            lp(0.3),
            lp(0.4),
            lp(0.9),
            lp(0.8),
            lp(0.2),
            lp(0.1),
            lp(0.6),
            lp(0.2),
        ];
        assert_eq!(
            contiguous_decode(&rows).unwrap(),
            vec![0, 0, 0, 0, 1, 1, 1, 1]
        );
        let rev: Vec<_> = rows.iter().rev().cloned().collect();
        assert_eq!(
            contiguous_decode(&rev).unwrap(),
            vec![1, 1, 1, 1, 0, 0, 0, 0]
        );
        let single = vec![lp(0.9), lp(0.7)];
        assert_eq!(contiguous_decode(&single).unwrap(), vec![0, 0]);
        assert!(contiguous_decode(&[]).unwrap().is_empty());
        assert!(contiguous_decode(&[vec![0.0], vec![0.0, 0.0]]).is_err());
    }

    fn tiny_spec() -> LocalizerSpec {
        LocalizerSpec::new(6, 5, 3, 2, 2).unwrap()
    }

    fn frame(vals: [f32; 6]) -> Frame {
        Frame {
            width: 2,
            height: 1,
            pixels: vals.to_vec(),
        }
    }

    #[test]
    fn metrics_hand_example() {
        let gt = [Some(0), Some(0), Some(1), Some(1)];
        let pred = [Some(0), Some(1), Some(1), Some(1)];
        let m = localization_metrics(&gt, &pred, 2).unwrap();
        assert_eq!(m.per_class_iou[0], Some(0.5));
        assert!((m.per_class_iou[1].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.miou - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.75);

        let same = localization_metrics(&gt, &gt, 2).unwrap();
        assert_eq!((same.accuracy, same.miou), (1.0, 1.0));
        let flipped = [Some(1), Some(1), Some(0), Some(0)];
        assert_eq!(localization_metrics(&gt, &flipped, 2).unwrap().miou, 0.0);
        assert!(localization_metrics(&gt, &pred[..3], 2).is_err());
    }

    #[test]
    fn nearest_snippet_rules() {
        let demo = vec![(vec![0.0], 0), (vec![1.0], 1)];
        let r = baseline_localize(&demo, &[vec![0.1], vec![0.5], vec![1.0]]);
        assert_eq!(r.labels, vec![Some(0), Some(0), Some(1)]);
    }

    #[test]
    fn snippet_gradient_matches_finite_differences() {
        let spec = tiny_spec();
        let theta = spec.init(3);
        let f = [
            frame([0.1, 0.9, 0.3, 0.0, 0.5, 0.2]),
            frame([0.7, 0.2, 0.1, 0.4, 0.4, 0.9]),
            frame([0.0, 0.3, 0.8, 0.6, 0.1, 0.3]),
            frame([0.9, 0.9, 0.2, 0.1, 0.0, 0.5]),
        ];
        let norm = Normalization::identity();
        let obj = SnippetObjective::new(&spec, &norm, &[(&f[0..2], 0), (&f[2..4], 1)]).unwrap();
        let p = theta.to_f64();
        let (_, g) = obj.loss_grad::<f64>(&p).unwrap();
        let fd = finite_diff(&obj, &p).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!(
                (a - b).abs() <= 1e-6 + 1e-4 * a.abs().max(b.abs()),
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn pooling_is_order_invariant_and_zero_params_give_zero_logits() {
        let spec = tiny_spec();
        let theta = spec.init(5);
        let norm = Normalization::identity();
        let a = frame([0.1, 0.9, 0.3, 0.0, 0.5, 0.2]);
        let b = frame([0.7, 0.2, 0.1, 0.4, 0.4, 0.9]);
        let ab = snippet_logits(&spec, &theta, &norm, &[a.clone(), b.clone()]).unwrap();
        let ba = snippet_logits(&spec, &theta, &norm, &[b.clone(), a.clone()]).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            assert!((x - y).abs() < 1e-12);
        }
        let single = snippet_logits(&spec, &theta, &norm, core::slice::from_ref(&a)).unwrap();
        let doubled = snippet_logits(&spec, &theta, &norm, &[a.clone(), a.clone()]).unwrap();
        for (x, y) in single.iter().zip(&doubled) {
            assert!((x - y).abs() < 1e-12);
        }
        let zero = ParamVector {
            values: vec![0.0; spec.param_count()],
            spec_hash: spec.fingerprint(),
        };
        assert_eq!(
            snippet_logits(&spec, &zero, &norm, &[a]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn frame_label_broadcast() {
        assert_eq!(
            frame_labels_from_snippets(&[Some(1), None], 2, 5),
            vec![Some(1), Some(1), None, None, None]
        );
    }
}
