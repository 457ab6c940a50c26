//! Subtask policies: behavioral cloning, GAE, PPO and sequential execution.
//!
//! Policies act in normalized units; the environment torque is the action
//! times `torque_limit`, clamped by the dynamics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    backward, forward_trace, init_params, Activation, NetSpec, Objective, OptimizerState,
    ParamVector,
};
use crate::error::{Error, Result};
use crate::reacher::{
    expert_action, fk, ik, place_targets, render, step_dynamics, success_check, ArmState,
    EnvConfig, Frame, Target,
};
use crate::reward::RewardModel;
use crate::scalar::Scalar;
use crate::taskgen::{mix_seed, LabeledVideo, TaskSpec};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Steps allotted to one subtask, in training and evaluation.
pub const SUBTASK_STEPS: usize = 60;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7;

/// Proprioception plus every target position, targets sorted by color.
pub fn observation(state: &ArmState) -> Vec<f64> {
    let [t1, t2] = state.joint_angles;
    let mut obs = vec![
        libm::sin(t1),
        libm::cos(t1),
        libm::sin(t2),
        libm::cos(t2),
        state.joint_velocities[0],
        state.joint_velocities[1],
    ];
    let mut targets: Vec<&Target> = state.targets.iter().collect();
    targets.sort_by_key(|t| t.color);
    for t in targets {
        obs.extend_from_slice(&t.position);
    }
    obs
}

pub fn observation_width(config: &EnvConfig) -> usize {
    6 + 2 * config.n_targets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub mean_spec: NetSpec,
    pub mean_params: ParamVector,
    pub log_std: [f32; 2],
    pub value_spec: NetSpec,
    pub value_params: ParamVector,
}

impl PolicyModel {
    pub fn new(obs_width: usize, hidden: usize, init_log_std: f64, seed: u64) -> Result<Self> {
        let mean_spec = NetSpec::uniform(&[obs_width, hidden, hidden, 2], Activation::Tanh)?;
        let value_spec = NetSpec::uniform(&[obs_width, hidden, hidden, 1], Activation::Tanh)?;
        let ls = init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX) as f32;
        Ok(Self {
            mean_params: init_params(&mean_spec, seed),
            value_params: init_params(&value_spec, mix_seed(seed, 0x7a1)),
            mean_spec,
            value_spec,
            log_std: [ls, ls],
        })
    }

    pub fn mean(&self, obs: &[f64]) -> [f64; 2] {
        let out = forward_trace::<f64, f64>(&self.mean_spec, &self.mean_params.to_f64(), obs)
            .into_output();
        [out[0], out[1]]
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        forward_trace::<f64, f64>(&self.value_spec, &self.value_params.to_f64(), obs).output()[0]
    }

    pub fn std(&self) -> [f64; 2] {
        [
            libm::exp(self.log_std[0] as f64),
            libm::exp(self.log_std[1] as f64),
        ]
    }

    pub fn log_prob(&self, obs: &[f64], action: [f64; 2]) -> f64 {
        gaussian_log_prob(self.mean(obs), self.log_std.map(f64::from), action)
    }

    fn flat(&self) -> Vec<f32> {
        let mut v = self.mean_params.values.clone();
        v.extend_from_slice(&self.value_params.values);
        v.extend_from_slice(&self.log_std);
        v
    }

    fn set_flat(&mut self, v: &[f32]) {
        let (nm, nv) = (self.mean_params.len(), self.value_params.len());
        self.mean_params.values.copy_from_slice(&v[..nm]);
        self.value_params.values.copy_from_slice(&v[nm..nm + nv]);
        for i in 0..2 {
            self.log_std[i] = (v[nm + nv + i] as f64).clamp(LOG_STD_MIN, LOG_STD_MAX) as f32;
        }
    }
}

pub fn gaussian_log_prob(mean: [f64; 2], log_std: [f64; 2], action: [f64; 2]) -> f64 {
    (0..2)
        .map(|i| {
            let z = (action[i] - mean[i]) * libm::exp(-log_std[i]);
            -0.5 * z * z - log_std[i] - HALF_LN_TAU
        })
        .sum()
}

/// Generalized advantage estimates; `values` carries one bootstrap entry.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::Shape(format!(
            "{} rewards need {} values, got {}",
            rewards.len(),
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

/// Clipped surrogate `min(rA, clip(r, 1-ε, 1+ε)A)`.
pub fn ppo_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Shift to mean 0 and scale to std 1 (std floored at 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var).max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: [f64; 2],
    pub log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            epochs: 4,
            minibatch: 64,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gamma: 0.99,
            lambda: 0.95,
        }
    }
}

/// Clipped-surrogate loss with value and entropy terms over a minibatch.
///
/// Parameters are laid out as mean net, value net, then the two log stds.
pub struct PpoObjective<'a> {
    policy: &'a PolicyModel,
    samples: Vec<&'a Sample>,
    config: &'a PpoConfig,
}

impl<'a> PpoObjective<'a> {
    pub fn new(policy: &'a PolicyModel, samples: Vec<&'a Sample>, config: &'a PpoConfig) -> Self {
        Self {
            policy,
            samples,
            config,
        }
    }
}

impl Objective for PpoObjective<'_> {
    fn param_len(&self) -> usize {
        self.policy.mean_params.len() + self.policy.value_params.len() + 2
    }

    fn loss_grad<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)> {
        let (nm, nv) = (
            self.policy.mean_params.len(),
            self.policy.value_params.len(),
        );
        let (pm, rest) = params.split_at(nm);
        let (pv, ls) = rest.split_at(nv);
        let mut grad = vec![S::zero(); params.len()];
        let inv_n = 1.0 / self.samples.len() as f64;
        let eps = self.config.clip_eps;
        let inv_var = [(ls[0].scale(-2.0)).exp(), (ls[1].scale(-2.0)).exp()];
        let mut total = S::zero();
        for (i, s) in self.samples.iter().enumerate() {
            let tm = forward_trace::<S, f64>(&self.policy.mean_spec, pm, &s.obs);
            let tv = forward_trace::<S, f64>(&self.policy.value_spec, pv, &s.obs);
            let mu = tm.output();
            let diff = [S::from(s.action[0]) - mu[0], S::from(s.action[1]) - mu[1]];
            let mut logp = S::zero();
            for k in 0..2 {
                logp += (diff[k] * diff[k] * inv_var[k]).scale(-0.5) - ls[k];
            }
            logp -= S::from(2.0 * HALF_LN_TAU);
            let ratio = (logp - S::from(s.log_prob)).exp();
            let a = s.advantage;
            let r = ratio.value();
            let inside = (1.0 - eps..=1.0 + eps).contains(&r);
            let unclipped_taken = r * a <= r.clamp(1.0 - eps, 1.0 + eps) * a;
            let surr = if unclipped_taken || inside {
                ratio.scale(a)
            } else {
                S::from(r.clamp(1.0 - eps, 1.0 + eps) * a)
            };
            let v_err = tv.output()[0] - S::from(s.ret);
            let entropy = ls[0] + ls[1];
            let loss = -surr + (v_err * v_err).scale(self.config.value_coef)
                - entropy.scale(self.config.entropy_coef);
            if !loss.value().is_finite() {
                return Err(Error::Numeric {
                    index: i,
                    what: format!("ppo loss {}", loss.value()),
                });
            }
            total += loss;

            let g_logp = if unclipped_taken || inside {
                ratio.scale(-a * inv_n)
            } else {
                S::zero()
            };
            let (gm, rest) = grad.split_at_mut(nm);
            let (gv, gl) = rest.split_at_mut(nv);
            let d_mu = [g_logp * diff[0] * inv_var[0], g_logp * diff[1] * inv_var[1]];
            backward(&self.policy.mean_spec, pm, &tm, &d_mu, gm, None);
            let d_v = [v_err.scale(2.0 * self.config.value_coef * inv_n)];
            backward(&self.policy.value_spec, pv, &tv, &d_v, gv, None);
            for k in 0..2 {
                gl[k] += g_logp * (diff[k] * diff[k] * inv_var[k] - S::from(1.0))
                    - S::from(self.config.entropy_coef * inv_n);
            }
        }
        Ok((total.scale(inv_n), grad))
    }
}

/// `epochs` passes of Adam over shuffled minibatches.
pub fn ppo_update(
    policy: &PolicyModel,
    samples: &[Sample],
    config: &PpoConfig,
    optimizer: &mut OptimizerState,
    seed: u64,
) -> Result<PolicyModel> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples for a PPO update".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = policy.clone();
    let mut flat = policy.flat();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mb = config.minibatch.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(mb) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let p: Vec<f64> = flat.iter().map(|&v| v as f64).collect();
            let (_, g) = PpoObjective::new(&current, batch, config).loss_grad::<f64>(&p)?;
            optimizer.apply(&mut flat, &g)?;
            current.set_flat(&flat);
            flat = current.flat();
        }
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 0,
            batch: 64,
            seed: 23,
        }
    }
}

/// Observation and normalized action for every frame of `video` labeled `subtask`.
pub fn demo_pairs(
    config: &EnvConfig,
    video: &LabeledVideo,
    subtask: usize,
) -> Vec<(Vec<f64>, [f64; 2])> {
    video
        .frame_labels
        .iter()
        .zip(video.states.iter().zip(&video.actions))
        .filter(|(l, _)| **l == Some(subtask))
        .map(|(_, (s, a))| {
            let state = ArmState {
                joint_angles: [s[0] as f64, s[1] as f64],
                joint_velocities: [s[2] as f64, s[3] as f64],
                targets: video.targets.clone(),
                time_step: 0,
            };
            let scale = 1.0 / config.torque_limit;
            (
                observation(&state),
                [a[0] as f64 * scale, a[1] as f64 * scale],
            )
        })
        .collect()
}

/// Mean squared error of the mean net against demo actions.
pub fn bc_loss(policy: &PolicyModel, demos: &[(Vec<f64>, [f64; 2])]) -> f64 {
    let total: f64 = demos
        .iter()
        .map(|(o, a)| {
            let m = policy.mean(o);
            (m[0] - a[0]).powi(2) + (m[1] - a[1]).powi(2)
        })
        .sum();
    total / demos.len().max(1) as f64
}

/// Regresses the mean net onto demo actions; value net and log std untouched.
pub fn bc_pretrain(
    policy: &PolicyModel,
    demos: &[(Vec<f64>, [f64; 2])],
    config: &BcConfig,
) -> Result<PolicyModel> {
    if demos.is_empty() {
        return Err(Error::Empty("no demonstration pairs".into()));
    }
    let mut out = policy.clone();
    let mut adam = OptimizerState::adam(config.lr, out.mean_params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = config.batch.clamp(1, demos.len());
    for _ in 0..config.steps {
        let p = out.mean_params.to_f64();
        let mut g = vec![0.0; p.len()];
        let inv = 1.0 / batch as f64;
        for _ in 0..batch {
            let (o, a) = &demos[rng.random_range(0..demos.len())];
            let t = forward_trace::<f64, f64>(&out.mean_spec, &p, o);
            let m = t.output();
            let d = [2.0 * (m[0] - a[0]) * inv, 2.0 * (m[1] - a[1]) * inv];
            backward(&out.mean_spec, &p, &t, &d, &mut g, None);
        }
        adam.apply(&mut out.mean_params.values, &g)?;
    }
    Ok(out)
}

/// Where per-step rewards come from.
#[derive(Debug, Clone, Copy)]
pub enum RewardSource<'a> {
    /// `-‖ee - target‖ - 0.01‖a‖²` with `a` in normalized units.
    GroundTruthDense,
    /// Anchored order-logit differences, multiplied by `scale`.
    Inferred { model: &'a RewardModel, scale: f64 },
}

/// One subtask episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub frames: Vec<Frame>,
    pub actions: Vec<[f64; 2]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// One entry per step plus the bootstrap value of the final state.
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub ee_trace: Vec<[f64; 2]>,
}

/// Joint noise around the predecessor pose, in radians.
pub const START_NOISE: f64 = 0.1;

/// A scene laid out at the anchor positions. With `after = Some(k)` the arm
/// rests near the pose that reaches subtask `k`'s target, otherwise at
/// random angles.
pub fn initial_state<R: Rng>(
    config: &EnvConfig,
    task: &TaskSpec,
    after: Option<usize>,
    rng: &mut R,
) -> Result<ArmState> {
    let targets = place_targets::<ChaCha8Rng>(config, task, None)?;
    let random = ArmState::random(rng, targets);
    match after {
        None => Ok(random),
        Some(k) => {
            let q = ik(config, subtask_goal(task, &random, k)?);
            let a = [
                q[0] + rng.random_range(-START_NOISE..START_NOISE),
                q[1] + rng.random_range(-START_NOISE..START_NOISE),
            ];
            Ok(ArmState::at_rest(a, random.targets))
        }
    }
}

fn subtask_goal(task: &TaskSpec, state: &ArmState, subtask: usize) -> Result<[f64; 2]> {
    let color = *task
        .target_colors
        .get(subtask)
        .ok_or_else(|| Error::Config(format!("task has no subtask {subtask}")))?;
    Ok(state.target(color)?.position)
}

#[allow(clippy::too_many_arguments)]
fn collect<R: Rng>(
    policy: &PolicyModel,
    config: &EnvConfig,
    task: &TaskSpec,
    subtask: usize,
    after: Option<usize>,
    source: RewardSource<'_>,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut state = initial_state(config, task, after, rng)?;
    let goal = subtask_goal(task, &state, subtask)?;
    let std = policy.std();
    let mut frame = render(config, &state);
    let anchored = match source {
        RewardSource::Inferred { model, .. } => Some(model.anchored(&frame)?),
        RewardSource::GroundTruthDense => None,
    };
    let mut g_prev = match &anchored {
        Some(a) => a.g(&frame)?,
        None => 0.0,
    };
    let mut tr = Trajectory {
        observations: Vec::with_capacity(steps),
        frames: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        log_probs: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        values: Vec::with_capacity(steps + 1),
        dones: Vec::with_capacity(steps),
        ee_trace: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let obs = observation(&state);
        let mean = policy.mean(&obs);
        let mut action = [0.0; 2];
        for k in 0..2 {
            let e: f64 = rng.sample(StandardNormal);
            action[k] = mean[k] + std[k] * e;
        }
        let torque = [
            action[0] * config.torque_limit,
            action[1] * config.torque_limit,
        ];
        tr.values.push(policy.value(&obs));
        tr.log_probs.push(policy.log_prob(&obs, action));
        state = step_dynamics(config, &state, torque);
        let ee = fk(config, state.joint_angles);
        let next = render(config, &state);
        let reward = match (&anchored, source) {
            (Some(a), RewardSource::Inferred { scale, .. }) => {
                let g = a.g(&next)?;
                let r = scale * (g - g_prev);
                g_prev = g;
                r
            }
            _ => {
                let d = libm::sqrt((ee[0] - goal[0]).powi(2) + (ee[1] - goal[1]).powi(2));
                -d - 0.01 * (action[0] * action[0] + action[1] * action[1])
            }
        };
        if !reward.is_finite() {
            return Err(Error::Numeric {
                index: t,
                what: format!("reward {reward}"),
            });
        }
        tr.observations.push(obs);
        tr.frames.push(core::mem::replace(&mut frame, next));
        tr.actions.push(action);
        tr.rewards.push(reward);
        tr.dones.push(t + 1 == steps);
        tr.ee_trace.push(ee);
    }
    tr.values.push(policy.value(&observation(&state)));
    Ok(tr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub iterations: usize,
    pub rollouts: usize,
    pub horizon: usize,
    pub probe_episodes: usize,
    pub reward_scale: f64,
    pub hidden: usize,
    pub init_log_std: f64,
    pub seed: u64,
    pub ppo: PpoConfig,
    pub bc: BcConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            rollouts: 16,
            horizon: SUBTASK_STEPS,
            probe_episodes: 20,
            reward_scale: 10.0,
            hidden: 64,
            init_log_std: -0.5,
            seed: 29,
            ppo: PpoConfig::default(),
            bc: BcConfig::default(),
        }
    }
}

/// Trained policy with the probe success rate after each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    pub policy: PolicyModel,
    pub curve: Vec<f64>,
}

/// PPO on one subtask, optionally warm-started by behavioral cloning.
/// Episodes start after subtask `after` when given.
#[allow(clippy::too_many_arguments)]
pub fn train_policy(
    env: &EnvConfig,
    task: &TaskSpec,
    subtask: usize,
    after: Option<usize>,
    source: RewardSource<'_>,
    demos: &[(Vec<f64>, [f64; 2])],
    config: &RlConfig,
) -> Result<TrainedPolicy> {
    env.validate()?;
    let mut policy = PolicyModel::new(
        observation_width(env),
        config.hidden,
        config.init_log_std,
        config.seed,
    )?;
    if config.bc.steps > 0 {
        policy = bc_pretrain(&policy, demos, &config.bc)?;
    }
    let n_params = policy.mean_params.len() + policy.value_params.len() + 2;
    let mut adam = OptimizerState::adam(config.ppo.lr, n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x2011));
    let probe_seed = mix_seed(config.seed, 0x960be);
    let mut curve = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let mut samples = Vec::with_capacity(config.rollouts * config.horizon);
        for _ in 0..config.rollouts {
            let tr = collect(
                &policy,
                env,
                task,
                subtask,
                after,
                source,
                config.horizon,
                &mut rng,
            )?;
            let adv = gae(&tr.rewards, &tr.values, config.ppo.gamma, config.ppo.lambda)?;
            for t in 0..tr.rewards.len() {
                samples.push(Sample {
                    obs: tr.observations[t].clone(),
                    action: tr.actions[t],
                    log_prob: tr.log_probs[t],
                    advantage: adv[t],
                    ret: adv[t] + tr.values[t],
                });
            }
        }
        let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        for (s, a) in samples.iter_mut().zip(adv) {
            s.advantage = a;
        }
        policy = ppo_update(
            &policy,
            &samples,
            &config.ppo,
            &mut adam,
            mix_seed(config.seed, it as u64),
        )?;
        if config.probe_episodes > 0 {
            curve.push(evaluate_policy(
                &policy,
                env,
                task,
                subtask,
                after,
                config.probe_episodes,
                probe_seed,
            )?);
        }
    }
    Ok(TrainedPolicy { policy, curve })
}

/// Anything that picks a torque for the current subtask.
pub trait Controller {
    fn act(&self, config: &EnvConfig, state: &ArmState) -> Result<[f64; 2]>;
}

/// Deterministic mean action, scaled to torque.
impl Controller for PolicyModel {
    fn act(&self, config: &EnvConfig, state: &ArmState) -> Result<[f64; 2]> {
        let m = self.mean(&observation(state));
        Ok([m[0] * config.torque_limit, m[1] * config.torque_limit])
    }
}

/// The scripted expert pursuing one color.
#[derive(Debug, Clone, Copy)]
pub struct ExpertController {
    pub color: usize,
}

impl Controller for ExpertController {
    fn act(&self, config: &EnvConfig, state: &ArmState) -> Result<[f64; 2]> {
        expert_action(config, state, self.color)
    }
}

/// Success rate of `controller` on one subtask from seeded starts.
pub fn evaluate_policy<C: Controller + ?Sized>(
    controller: &C,
    env: &EnvConfig,
    task: &TaskSpec,
    subtask: usize,
    after: Option<usize>,
    n_trials: usize,
    seed: u64,
) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::Config("evaluation needs at least one trial".into()));
    }
    let mut wins = 0;
    for trial in 0..n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let mut state = initial_state(env, task, after, &mut rng)?;
        let goal = subtask_goal(task, &state, subtask)?;
        let mut trace = Vec::with_capacity(SUBTASK_STEPS);
        for _ in 0..SUBTASK_STEPS {
            let a = controller.act(env, &state)?;
            state = step_dynamics(env, &state, a);
            trace.push(fk(env, state.joint_angles));
        }
        if success_check(env, &trace, goal) {
            wins += 1;
        }
    }
    Ok(wins as f64 / n_trials as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    /// Success rate of each step of the sequence.
    pub per_subtask: Vec<f64>,
    pub overall: f64,
}

/// Runs `controllers[k]` on subtask `order[k]` until its hold criterion is
/// met or its step budget expires, then moves on.
pub fn execute_sequence(
    controllers: &[&dyn Controller],
    order: &[usize],
    env: &EnvConfig,
    task: &TaskSpec,
    n_trials: usize,
    seed: u64,
) -> Result<SequenceResult> {
    if controllers.len() != order.len() || n_trials == 0 {
        return Err(Error::Config(
            "need one controller per subtask and at least one trial".into(),
        ));
    }
    let mut per = vec![0usize; order.len()];
    let mut overall = 0;
    for trial in 0..n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let mut state = initial_state(env, task, None, &mut rng)?;
        let mut all = true;
        for (k, (&sub, c)) in order.iter().zip(controllers).enumerate() {
            let goal = subtask_goal(task, &state, sub)?;
            let mut trace = Vec::with_capacity(SUBTASK_STEPS);
            let mut ok = false;
            for _ in 0..SUBTASK_STEPS {
                let a = c.act(env, &state)?;
                state = step_dynamics(env, &state, a);
                trace.push(fk(env, state.joint_angles));
                if success_check(
                    env,
                    &trace[trace.len().saturating_sub(env.hold_frames)..],
                    goal,
                ) {
                    ok = true;
                    break;
                }
            }
            if ok {
                per[k] += 1;
            }
            all &= ok;
        }
        if all {
            overall += 1;
        }
    }
    let n = n_trials as f64;
    Ok(SequenceResult {
        per_subtask: per.iter().map(|&p| p as f64 / n).collect(),
        overall: overall as f64 / n,
    })
}
