//! Reward inference from localized video via frame-order prediction.
//!
//! `g(a, b)` is the logit that frame `a` precedes frame `b` within one
//! subtask. The per-step reward is anchored on an initial frame:
//! `R_t = g(o_0, o_{t+1}) - g(o_0, o_t)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    backward, forward_trace, init_params, logistic_ce, Activation, NetSpec, Objective,
    OptimizerState, ParamVector,
};
use crate::error::{Error, Result};
use crate::normalize::Normalization;
use crate::reacher::Frame;
use crate::scalar::Scalar;
use crate::taskgen::{mix_seed, LabeledVideo};

/// Resolution of `g`; sums and differences of grid values are exact in f64.
const G_GRID: f64 = (1u64 << 24) as f64;
const G_LIMIT: f64 = (1u64 << 28) as f64;

fn quantize(g: f64) -> f64 {
    libm::round(g.clamp(-G_LIMIT, G_LIMIT) * G_GRID) / G_GRID
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub embed_spec: NetSpec,
    pub embed_params: ParamVector,
    pub predictor_spec: NetSpec,
    pub predictor_params: ParamVector,
    pub normalization: Normalization,
    /// `None` for a model trained on unsegmented video.
    pub subtask_id: Option<usize>,
    pub final_loss: f64,
    pub seed: u64,
}

impl RewardModel {
    pub fn new(
        frame_len: usize,
        hidden: usize,
        embed_dim: usize,
        predictor_hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        let embed_spec = NetSpec::uniform(&[frame_len, hidden, embed_dim], Activation::Tanh)?;
        let predictor_spec =
            NetSpec::uniform(&[2 * embed_dim, predictor_hidden, 1], Activation::Tanh)?;
        Ok(Self {
            embed_params: init_params(&embed_spec, seed),
            predictor_params: init_params(&predictor_spec, mix_seed(seed, 0x9ed)),
            embed_spec,
            predictor_spec,
            normalization: Normalization::identity(),
            subtask_id: None,
            final_loss: f64::NAN,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictor_spec.input_width() != 2 * self.embed_spec.output_width()
            || self.predictor_spec.output_width() != 1
        {
            return Err(Error::Shape(
                "predictor must map two embeddings to one logit".into(),
            ));
        }
        if self.embed_params.len() != self.embed_spec.param_count()
            || self.predictor_params.len() != self.predictor_spec.param_count()
        {
            return Err(Error::Shape(
                "reward parameters do not match their networks".into(),
            ));
        }
        self.normalization.validate()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.embed_params.to_f64();
        p.extend(self.predictor_params.to_f64());
        p
    }

    fn set_params(&mut self, values: &[f32]) {
        let n = self.embed_params.len();
        self.embed_params.values.copy_from_slice(&values[..n]);
        self.predictor_params.values.copy_from_slice(&values[n..]);
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        if f.pixels.len() != self.embed_spec.input_width() {
            return Err(Error::Shape(format!(
                "frame has {} values, reward model expects {}",
                f.pixels.len(),
                self.embed_spec.input_width()
            )));
        }
        Ok(())
    }

    pub fn embed(&self, f: &Frame) -> Result<Vec<f64>> {
        self.check_frame(f)?;
        let p = self.embed_params.to_f64();
        Ok(
            forward_trace::<f64, f64>(&self.embed_spec, &p, &self.normalization.apply(f))
                .into_output(),
        )
    }

    fn predict(&self, ea: &[f64], eb: &[f64]) -> f64 {
        let mut x = ea.to_vec();
        x.extend_from_slice(eb);
        let p = self.predictor_params.to_f64();
        quantize(forward_trace::<f64, f64>(&self.predictor_spec, &p, &x).output()[0])
    }

    /// Reward evaluator with a fixed anchor frame.
    pub fn anchored(&self, anchor: &Frame) -> Result<Anchored<'_>> {
        Ok(Anchored {
            model: self,
            anchor: self.embed(anchor)?,
        })
    }
}

/// `g(o_0, ·)` with the anchor embedding cached.
pub struct Anchored<'a> {
    model: &'a RewardModel,
    anchor: Vec<f64>,
}

impl Anchored<'_> {
    pub fn g(&self, f: &Frame) -> Result<f64> {
        Ok(self.model.predict(&self.anchor, &self.model.embed(f)?))
    }

    pub fn step(&self, ot: &Frame, ot1: &Frame) -> Result<f64> {
        Ok(self.g(ot1)? - self.g(ot)?)
    }
}

/// Raw order logit `g(a, b)`.
pub fn g_eval(model: &RewardModel, a: &Frame, b: &Frame) -> Result<f64> {
    Ok(model.predict(&model.embed(a)?, &model.embed(b)?))
}

pub fn step_reward(model: &RewardModel, o0: &Frame, ot: &Frame, ot1: &Frame) -> Result<f64> {
    model.anchored(o0)?.step(ot, ot1)
}

/// Cumulative step rewards along `frames`, anchored on the first frame.
pub fn progress_curve(model: &RewardModel, frames: &[Frame]) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::Empty(
            "a progress curve needs at least 2 frames".into(),
        ));
    }
    let anchored = model.anchored(&frames[0])?;
    let g: Vec<f64> = frames
        .iter()
        .map(|f| anchored.g(f))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    Ok(g.windows(2)
        .map(|w| {
            total += w[1] - w[0];
            total
        })
        .collect())
}

/// Which frames of a video a pair may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Subtask(usize),
    /// Every frame, ignoring labels.
    Any,
}

impl Activity {
    fn admits(self, label: Option<usize>) -> bool {
        match self {
            Activity::Subtask(k) => label == Some(k),
            Activity::Any => true,
        }
    }
}

/// Two frames of one video, referenced by index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderPair {
    pub video: usize,
    pub index_a: usize,
    pub index_b: usize,
    /// 1 if `index_a < index_b`, else 0, before any label noise.
    pub target: f64,
    pub activity: Activity,
}

impl OrderPair {
    pub fn frames<'v>(&self, videos: &'v [LabeledVideo]) -> Result<(&'v Frame, &'v Frame)> {
        let v = videos
            .get(self.video)
            .ok_or_else(|| Error::Shape(format!("pair refers to missing video {}", self.video)))?;
        match (v.frames.get(self.index_a), v.frames.get(self.index_b)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Shape(format!(
                "pair indices outside video {}",
                self.video
            ))),
        }
    }

    pub fn truth(&self) -> f64 {
        if self.index_a < self.index_b {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub n: usize,
    pub min_gap: usize,
    pub seed: u64,
    /// Probability of flipping each pair's target.
    pub flip_prob: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            min_gap: 2,
            seed: 13,
            flip_prob: 0.0,
        }
    }
}

/// Random ordered frame pairs from frames labeled `activity`, at least
/// `min_gap` apart, presented in random order.
pub fn sample_order_pairs(
    videos: &[LabeledVideo],
    activity: Activity,
    config: &PairConfig,
) -> Result<Vec<OrderPair>> {
    let sparse = || Error::DataSparsity {
        activity: match activity {
            Activity::Subtask(k) => k,
            Activity::Any => usize::MAX,
        },
        min_gap: config.min_gap,
    };
    let gap = config.min_gap.max(1);
    let pools: Vec<(usize, Vec<usize>)> = videos
        .iter()
        .enumerate()
        .filter_map(|(vi, v)| {
            let idx: Vec<usize> = v
                .frame_labels
                .iter()
                .enumerate()
                .filter(|(_, l)| activity.admits(**l))
                .map(|(i, _)| i)
                .collect();
            (idx.len() >= 2 && idx[idx.len() - 1] - idx[0] >= gap).then_some((vi, idx))
        })
        .collect();
    if pools.is_empty() {
        return Err(sparse());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let (vi, idx) = &pools[rng.random_range(0..pools.len())];
        let (lo, hi) = (idx[0], idx[idx.len() - 1]);
        let firsts: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| i + gap <= hi || i >= lo + gap)
            .collect();
        let i = firsts[rng.random_range(0..firsts.len())];
        let partners: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&j| j.abs_diff(i) >= gap)
            .collect();
        let j = partners[rng.random_range(0..partners.len())];
        let (a, b) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
        let mut target = if a < b { 1.0 } else { 0.0 };
        if config.flip_prob > 0.0 && rng.random_bool(config.flip_prob.min(1.0)) {
            target = 1.0 - target;
        }
        out.push(OrderPair {
            video: *vi,
            index_a: a,
            index_b: b,
            target,
            activity,
        });
    }
    Ok(out)
}

/// Mean logistic cross entropy of `g(a, b)` over frame pairs.
pub struct PairObjective<'a> {
    embed: &'a NetSpec,
    predictor: &'a NetSpec,
    inputs: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl<'a> PairObjective<'a> {
    pub fn new(model: &'a RewardModel, pairs: &[(&Frame, &Frame, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("no frame pairs".into()));
        }
        let mut inputs = Vec::with_capacity(pairs.len());
        for (a, b, t) in pairs {
            model.check_frame(a)?;
            model.check_frame(b)?;
            inputs.push((
                model.normalization.apply(a),
                model.normalization.apply(b),
                *t,
            ));
        }
        Ok(Self {
            embed: &model.embed_spec,
            predictor: &model.predictor_spec,
            inputs,
        })
    }
}

impl Objective for PairObjective<'_> {
    fn param_len(&self) -> usize {
        self.embed.param_count() + self.predictor.param_count()
    }

    fn loss_grad<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)> {
        let ne = self.embed.param_count();
        let e = self.embed.output_width();
        let (pe, pp) = params.split_at(ne);
        let mut grad = vec![S::zero(); params.len()];
        let inv = 1.0 / self.inputs.len() as f64;
        let mut total = S::zero();
        let mut d_x = vec![S::zero(); 2 * e];
        for (i, (a, b, t)) in self.inputs.iter().enumerate() {
            let ta = forward_trace::<S, f64>(self.embed, pe, a);
            let tb = forward_trace::<S, f64>(self.embed, pe, b);
            let mut x = ta.output().to_vec();
            x.extend_from_slice(tb.output());
            let tp = forward_trace::<S, S>(self.predictor, pp, &x);
            let (loss, dz) = logistic_ce(tp.output()[0], *t);
            if !loss.value().is_finite() {
                return Err(Error::Numeric {
                    index: i,
                    what: format!("pair loss {}", loss.value()),
                });
            }
            total += loss;
            let (ge, gp) = grad.split_at_mut(ne);
            backward(
                self.predictor,
                pp,
                &tp,
                &[dz.scale(inv)],
                gp,
                Some(&mut d_x),
            );
            backward(self.embed, pe, &ta, &d_x[..e], ge, None);
            backward(self.embed, pe, &tb, &d_x[e..], ge, None);
        }
        Ok((total.scale(inv), grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardTrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub predictor_hidden: usize,
    pub weight_decay: f64,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 600,
            batch: 32,
            seed: 17,
            hidden: 64,
            embed_dim: 32,
            predictor_hidden: 64,
            weight_decay: 0.1,
        }
    }
}

fn pair_frames<'v>(
    videos: &'v [LabeledVideo],
    pairs: &[OrderPair],
) -> Result<Vec<(&'v Frame, &'v Frame, f64)>> {
    pairs
        .iter()
        .map(|p| p.frames(videos).map(|(a, b)| (a, b, p.target)))
        .collect()
}

/// Adam on logistic cross entropy over random mini-batches of `pairs`.
pub fn train_reward(
    videos: &[LabeledVideo],
    pairs: &[OrderPair],
    subtask_id: Option<usize>,
    config: &RewardTrainConfig,
) -> Result<RewardModel> {
    if pairs.len() < 2 {
        return Err(Error::Empty(format!(
            "{} order pairs; need at least 2",
            pairs.len()
        )));
    }
    if !pairs.iter().any(|p| p.target == 1.0) || !pairs.iter().any(|p| p.target == 0.0) {
        return Err(Error::Degenerate("order targets are all one class".into()));
    }
    let all = pair_frames(videos, pairs)?;
    let frame_len = all[0].0.pixels.len();
    let mut model = RewardModel::new(
        frame_len,
        config.hidden,
        config.embed_dim,
        config.predictor_hidden,
        config.seed,
    )?;
    model.subtask_id = subtask_id;
    model.normalization = Normalization::fit(all.iter().flat_map(|(a, b, _)| [*a, *b]))?;

    let mut values: Vec<f32> = model.embed_params.values.clone();
    values.extend_from_slice(&model.predictor_params.values);
    let mut adam = OptimizerState::adam(config.lr, values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x0dd));
    let batch = config.batch.clamp(1, all.len());
    let mut last = f64::NAN;
    for _ in 0..config.steps {
        let picked: Vec<_> = sample(&mut rng, all.len(), batch)
            .into_iter()
            .map(|i| all[i])
            .collect();
        let obj = PairObjective::new(&model, &picked)?;
        let p: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let (loss, mut g) = obj.loss_grad::<f64>(&p)?;
        if config.weight_decay > 0.0 {
            for (gi, pi) in g.iter_mut().zip(&p) {
                *gi += config.weight_decay * pi;
            }
        }
        adam.apply(&mut values, &g)?;
        last = loss;
    }
    model.set_params(&values);
    model.final_loss = last;
    Ok(model)
}

/// Mean logistic loss of the model over `pairs`.
pub fn pair_loss(model: &RewardModel, videos: &[LabeledVideo], pairs: &[OrderPair]) -> Result<f64> {
    let all = pair_frames(videos, pairs)?;
    PairObjective::new(model, &all)?.loss(&model.params())
}

/// Fraction of pairs whose true order agrees with the sign of `g`.
pub fn pair_accuracy(
    model: &RewardModel,
    videos: &[LabeledVideo],
    pairs: &[OrderPair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs to score".into()));
    }
    let mut correct = 0usize;
    for p in pairs {
        let (a, b) = p.frames(videos)?;
        let g = g_eval(model, a, b)?;
        if (g > 0.0) == (p.truth() == 1.0) {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let (rx, ry) = (ranks(&xs[..n]), ranks(&ys[..n]));
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / libm::sqrt(sxx * syy)
    }
}

/// Spearman correlation between a progress curve and time.
pub fn progress_monotonicity(model: &RewardModel, frames: &[Frame]) -> Result<f64> {
    let curve = progress_curve(model, frames)?;
    let t: Vec<f64> = (0..curve.len()).map(|i| i as f64).collect();
    Ok(spearman(&curve, &t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::finite_diff;

    fn tiny_model() -> RewardModel {
        RewardModel::new(6, 4, 3, 5, 2).unwrap()
    }

    fn frame(seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame {
            width: 2,
            height: 1,
            pixels: (0..6).map(|_| rng.random::<f32>()).collect(),
        }
    }

    fn video(labels: Vec<Option<usize>>) -> LabeledVideo {
        let n = labels.len();
        LabeledVideo::new(
            (0..n as u64).map(frame).collect(),
            labels,
            vec![[0.0; 4]; n],
            vec![[0.0; 2]; n],
            vec![],
            0,
            vec![0, 1],
        )
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let m = tiny_model();
        let (a, b, c) = (frame(1), frame(2), frame(3));
        let obj = PairObjective::new(&m, &[(&a, &b, 1.0), (&c, &a, 0.0)]).unwrap();
        let p = m.params();
        let (_, g) = obj.loss_grad::<f64>(&p).unwrap();
        let fd = finite_diff(&obj, &p).unwrap();
        for (x, y) in g.iter().zip(&fd) {
            assert!(
                (x - y).abs() <= 1e-6 + 1e-4 * x.abs().max(y.abs()),
                "{x} vs {y}"
            );
        }
    }

    #[test]
    fn zero_predictor_gives_zero_logit() {
        let mut m = tiny_model();
        m.predictor_params.values.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(g_eval(&m, &frame(1), &frame(2)).unwrap(), 0.0);
        assert!(g_eval(&tiny_model(), &frame(1), &frame(1))
            .unwrap()
            .is_finite());
    }

    #[test]
    fn step_reward_identities() {
        let m = tiny_model();
        let frames: Vec<Frame> = (0..12).map(frame).collect();
        assert_eq!(
            step_reward(&m, &frames[0], &frames[3], &frames[3]).unwrap(),
            0.0
        );
        let r = step_reward(&m, &frames[0], &frames[1], &frames[2]).unwrap();
        assert_eq!(
            r,
            -step_reward(&m, &frames[0], &frames[2], &frames[1]).unwrap()
        );
        let curve = progress_curve(&m, &frames).unwrap();
        assert_eq!(curve.len(), 11);
        let end = g_eval(&m, &frames[0], &frames[11]).unwrap()
            - g_eval(&m, &frames[0], &frames[0]).unwrap();
        assert_eq!(*curve.last().unwrap(), end);
        let still = progress_curve(&m, &vec![frame(4); 5]).unwrap();
        assert!(still.iter().all(|&v| v == 0.0));
        assert!(progress_curve(&m, &frames[..1]).is_err());
    }

    #[test]
    fn sampler_respects_labels_and_gap() {
        let v = vec![video(vec![Some(0), Some(0), Some(1), Some(1)])];
        let cfg = PairConfig {
            n: 50,
            min_gap: 1,
            ..PairConfig::default()
        };
        let pairs = sample_order_pairs(&v, Activity::Subtask(0), &cfg).unwrap();
        assert!(pairs
            .iter()
            .all(|p| p.index_a < 2 && p.index_b < 2 && p.index_a != p.index_b));
        let far = PairConfig {
            min_gap: 3,
            ..cfg.clone()
        };
        assert_eq!(
            sample_order_pairs(&v, Activity::Subtask(0), &far),
            Err(Error::DataSparsity {
                activity: 0,
                min_gap: 3
            })
        );
        let any = sample_order_pairs(&v, Activity::Any, &far).unwrap();
        assert!(any.iter().all(|p| p.index_a.abs_diff(p.index_b) >= 3));
    }

    #[test]
    fn sampler_balances_targets() {
        let v = vec![video(vec![Some(0); 30])];
        let cfg = PairConfig {
            n: 1000,
            ..PairConfig::default()
        };
        let pairs = sample_order_pairs(&v, Activity::Subtask(0), &cfg).unwrap();
        let ones = pairs.iter().filter(|p| p.target == 1.0).count() as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&ones), "{ones}");
        assert!(pairs.iter().all(|p| p.target == p.truth()));
    }

    #[test]
    fn training_contracts() {
        let v = vec![video(vec![Some(0); 20])];
        let pairs = sample_order_pairs(&v, Activity::Subtask(0), &PairConfig::default()).unwrap();
        let zero = RewardTrainConfig {
            steps: 0,
            hidden: 4,
            embed_dim: 3,
            predictor_hidden: 5,
            ..Default::default()
        };
        let m = train_reward(&v, &pairs, Some(0), &zero).unwrap();
        let init = RewardModel::new(6, 4, 3, 5, zero.seed).unwrap();
        assert_eq!(m.embed_params, init.embed_params);
        assert_eq!(m.predictor_params, init.predictor_params);
        let ln2 = pair_loss(&m, &v, &pairs).unwrap();
        assert!((ln2 - core::f64::consts::LN_2).abs() < 0.05, "{ln2}");

        let cfg = RewardTrainConfig {
            steps: 30,
            ..zero.clone()
        };
        let a = train_reward(&v, &pairs, Some(0), &cfg).unwrap();
        let b = train_reward(&v, &pairs, Some(0), &cfg).unwrap();
        assert_eq!(a, b);

        let ones: Vec<OrderPair> = pairs.iter().copied().filter(|p| p.target == 1.0).collect();
        assert!(matches!(
            train_reward(&v, &ones, Some(0), &cfg),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!(
            (spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]) - 0.9486832980505138).abs()
                < 1e-12
        );
    }
}
