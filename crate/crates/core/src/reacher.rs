//! Two-joint planar reacher: discrete damped dynamics, a scripted expert,
//! a deterministic rasterizer and the hold-based success rule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::{LabeledVideo, TaskSpec};

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = libm::fmod(a, 2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    } else if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub link_lengths: [f64; 2],
    pub torque_limit: f64,
    /// Velocity retained per step.
    pub damping: f64,
    pub target_radius: f64,
    pub hold_frames: usize,
    pub episode_length: usize,
    pub image_size: usize,
    /// RGB per color index.
    pub palette: Vec<[f32; 3]>,
    /// Nominal world position per color index; scenes jitter around it.
    pub anchors: Vec<[f64; 2]>,
    pub position_jitter: f64,
    pub n_targets: usize,
    pub kp: f64,
    pub kd: f64,
    pub base: [f64; 2],
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            link_lengths: [0.5, 0.5],
            torque_limit: 0.05,
            damping: 0.9,
            target_radius: 0.08,
            hold_frames: 16,
            episode_length: 120,
            image_size: 24,
            palette: default_palette(),
            anchors: default_anchors(),
            position_jitter: 0.1,
            n_targets: 4,
            kp: 0.02,
            kd: 0.1,
            base: [0.0, 0.0],
        }
    }
}

/// Colors 0–3 form the training universe, 4–7 the held-out one.
pub fn default_palette() -> Vec<[f32; 3]> {
    vec![
        [1.0, 0.5, 0.0], // orange
        [0.0, 0.8, 0.0], // green
        [0.2, 0.4, 1.0], // blue
        [1.0, 0.0, 0.0], // red
        [1.0, 0.0, 1.0], // magenta
        [0.0, 1.0, 1.0], // cyan
        [1.0, 1.0, 0.0], // yellow
        [0.6, 0.2, 1.0], // violet
    ]
}

/// Colors `c` and `c + 4` share a ring slot; the held-out universe sits
/// rotated by a quarter slot so unseen colors also occupy unseen places.
pub fn default_anchors() -> Vec<[f64; 2]> {
    (0..8)
        .map(|c| {
            let slot = (c % 4) as f64;
            let shift = if c >= 4 { PI / 4.0 } else { 0.0 };
            let a = PI / 4.0 + slot * PI / 2.0 + shift;
            [0.65 * libm::cos(a), 0.65 * libm::sin(a)]
        })
        .collect()
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        if self.hold_frames >= self.episode_length {
            return Err(Error::Config(
                "hold_frames must be below episode_length".into(),
            ));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if self.anchors.len() < self.palette.len() {
            return Err(Error::Config("every palette color needs an anchor".into()));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.image_size * self.image_size * 3
    }

    fn reach_bounds(&self) -> (f64, f64) {
        let [l1, l2] = self.link_lengths;
        ((l1 - l2).abs(), l1 + l2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub color: usize,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub joint_angles: [f64; 2],
    pub joint_velocities: [f64; 2],
    pub targets: Vec<Target>,
    pub time_step: u64,
}

impl ArmState {
    pub fn at_rest(joint_angles: [f64; 2], targets: Vec<Target>) -> Self {
        Self {
            joint_angles: [wrap_angle(joint_angles[0]), wrap_angle(joint_angles[1])],
            joint_velocities: [0.0; 2],
            targets,
            time_step: 0,
        }
    }

    /// Random joint angles, zero velocity.
    pub fn random<R: Rng>(rng: &mut R, targets: Vec<Target>) -> Self {
        let a = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        Self::at_rest(a, targets)
    }

    pub fn target(&self, color: usize) -> Result<&Target> {
        self.targets
            .iter()
            .find(|t| t.color == color)
            .ok_or(Error::MissingColor(color))
    }
}

/// RGB image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, row: i64, col: i64, rgb: [f32; 3]) {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            return;
        }
        let i = (row as usize * self.width + col as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn fk(config: &EnvConfig, angles: [f64; 2]) -> [f64; 2] {
    let [l1, l2] = config.link_lengths;
    let s = angles[0] + angles[1];
    [
        config.base[0] + l1 * libm::cos(angles[0]) + l2 * libm::cos(s),
        config.base[1] + l1 * libm::sin(angles[0]) + l2 * libm::sin(s),
    ]
}

fn elbow(config: &EnvConfig, angles: [f64; 2]) -> [f64; 2] {
    let l1 = config.link_lengths[0];
    [
        config.base[0] + l1 * libm::cos(angles[0]),
        config.base[1] + l1 * libm::sin(angles[0]),
    ]
}

/// Elbow-up inverse kinematics; unreachable distances are clamped to the annulus.
pub fn ik(config: &EnvConfig, position: [f64; 2]) -> [f64; 2] {
    let [l1, l2] = config.link_lengths;
    let (x, y) = (position[0] - config.base[0], position[1] - config.base[1]);
    let (lo, hi) = config.reach_bounds();
    let d = libm::sqrt(x * x + y * y).clamp(lo.max(1e-9), hi);
    let c2 = ((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = -libm::acos(c2);
    let q1 = libm::atan2(y, x) - libm::atan2(l2 * libm::sin(q2), l1 + l2 * libm::cos(q2));
    [wrap_angle(q1), wrap_angle(q2)]
}

pub fn clamp_action(config: &EnvConfig, action: [f64; 2]) -> [f64; 2] {
    let lim = config.torque_limit;
    [action[0].clamp(-lim, lim), action[1].clamp(-lim, lim)]
}

pub fn step_dynamics(config: &EnvConfig, state: &ArmState, action: [f64; 2]) -> ArmState {
    let a = clamp_action(config, action);
    let mut next = state.clone();
    for j in 0..2 {
        let v = config.damping * state.joint_velocities[j] + a[j];
        next.joint_velocities[j] = v;
        next.joint_angles[j] = wrap_angle(state.joint_angles[j] + v);
    }
    next.time_step += 1;
    next
}

fn to_pixel(config: &EnvConfig, p: [f64; 2]) -> (i64, i64) {
    let n = config.image_size as f64;
    let col = libm::floor((p[0] + 1.0) * 0.5 * n).clamp(-4.0 * n, 5.0 * n);
    let row = libm::floor((1.0 - p[1]) * 0.5 * n).clamp(-4.0 * n, 5.0 * n);
    (row as i64, col as i64)
}

/// Integer midpoint line between pixel cells; off-image cells are skipped.
fn draw_line(frame: &mut Frame, from: (i64, i64), to: (i64, i64), rgb: [f32; 3]) {
    let (mut r, mut c) = from;
    let dr = (to.0 - r).abs();
    let dc = (to.1 - c).abs();
    let sr = if to.0 >= r { 1 } else { -1 };
    let sc = if to.1 >= c { 1 } else { -1 };
    let mut err = dc - dr;
    loop {
        frame.put(r, c, rgb);
        if (r, c) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dr {
            err -= dr;
            c += sc;
        }
        if e2 < dc {
            err += dc;
            r += sr;
        }
    }
}

/// Black background, filled target disks, white 1-pixel arm on top.
pub fn render(config: &EnvConfig, state: &ArmState) -> Frame {
    let n = config.image_size;
    let mut frame = Frame::blank(n, n);
    let scale = 2.0 / n as f64;
    let r2 = config.target_radius * config.target_radius;
    for t in &state.targets {
        let rgb = config
            .palette
            .get(t.color)
            .copied()
            .unwrap_or([1.0, 1.0, 1.0]);
        for row in 0..n {
            let y = 1.0 - (row as f64 + 0.5) * scale;
            let dy = y - t.position[1];
            if dy * dy > r2 {
                continue;
            }
            for col in 0..n {
                let x = (col as f64 + 0.5) * scale - 1.0;
                let dx = x - t.position[0];
                if dx * dx + dy * dy <= r2 {
                    frame.put(row as i64, col as i64, rgb);
                }
            }
        }
    }
    let white = [1.0f32; 3];
    let base = to_pixel(config, config.base);
    let mid = to_pixel(config, elbow(config, state.joint_angles));
    let tip = to_pixel(config, fk(config, state.joint_angles));
    draw_line(&mut frame, base, mid, white);
    draw_line(&mut frame, mid, tip, white);
    frame
}

/// PD torque toward the inverse-kinematics solution for `target_color`.
pub fn expert_action(
    config: &EnvConfig,
    state: &ArmState,
    target_color: usize,
) -> Result<[f64; 2]> {
    let target = state.target(target_color)?;
    let goal = ik(config, target.position);
    let mut a = [0.0; 2];
    for j in 0..2 {
        let err = wrap_angle(goal[j] - state.joint_angles[j]);
        a[j] = config.kp * err - config.kd * state.joint_velocities[j];
    }
    Ok(clamp_action(config, a))
}

pub fn within_target(config: &EnvConfig, ee: [f64; 2], target: [f64; 2]) -> bool {
    let dx = ee[0] - target[0];
    let dy = ee[1] - target[1];
    dx * dx + dy * dy <= config.target_radius * config.target_radius
}

/// True iff at least `hold_frames` consecutive trace points lie on the target.
pub fn success_check(config: &EnvConfig, ee_trace: &[[f64; 2]], target: [f64; 2]) -> bool {
    let mut run = 0;
    for &p in ee_trace {
        if within_target(config, p, target) {
            run += 1;
            if run >= config.hold_frames {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Target layout for a task: shown colors sorted by index, each at its anchor
/// plus uniform jitter, pulled inside the reachable annulus.
pub fn place_targets<R: Rng>(
    config: &EnvConfig,
    task: &TaskSpec,
    rng: Option<&mut R>,
) -> Result<Vec<Target>> {
    let mut colors: Vec<usize> = task
        .target_colors
        .iter()
        .chain(task.distractor_colors.iter())
        .copied()
        .collect();
    colors.sort_unstable();
    let (lo, hi) = config.reach_bounds();
    let (lo, hi) = (lo + 0.5 * config.target_radius, hi - config.target_radius);
    let mut rng = rng;
    colors
        .into_iter()
        .map(|c| {
            let anchor = *config.anchors.get(c).ok_or(Error::MissingColor(c))?;
            let mut p = anchor;
            if let Some(r) = rng.as_deref_mut() {
                if config.position_jitter > 0.0 {
                    let j = config.position_jitter;
                    p[0] += r.random_range(-j..j);
                    p[1] += r.random_range(-j..j);
                }
            }
            let (x, y) = (p[0] - config.base[0], p[1] - config.base[1]);
            let d = libm::sqrt(x * x + y * y);
            if d > 0.0 && (d < lo || d > hi) {
                let s = d.clamp(lo, hi) / d;
                p = [config.base[0] + x * s, config.base[1] + y * s];
            }
            Ok(Target {
                color: c,
                position: p,
            })
        })
        .collect()
}

/// Expert demonstration of `task` visiting subtasks in `order` (label indices).
///
/// Every frame carries the label of the subtask being pursued when it was
/// rendered; the expert moves on once the hold rule is met.
pub fn rollout_expert(
    config: &EnvConfig,
    task: &TaskSpec,
    order: &[usize],
    seed: u64,
) -> Result<LabeledVideo> {
    let k = task.target_colors.len();
    let mut seen = vec![false; k];
    if order.len() != k
        || order
            .iter()
            .any(|&o| o >= k || core::mem::replace(&mut seen[o], true))
    {
        return Err(Error::Config(format!(
            "{order:?} is not a permutation of 0..{k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = place_targets(config, task, Some(&mut rng))?;
    let mut state = ArmState::random(&mut rng, targets.clone());

    let mut frames = Vec::new();
    let mut labels = Vec::new();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for &label in order {
        let color = task.target_colors[label];
        let goal = state.target(color)?.position;
        let mut held = 0;
        while held < config.hold_frames {
            if frames.len() >= config.episode_length {
                return Err(Error::Generation(format!(
                    "episode budget of {} frames exhausted before subtask {label} completed",
                    config.episode_length
                )));
            }
            let a = expert_action(config, &state, color)?;
            frames.push(render(config, &state));
            labels.push(Some(label));
            states.push([
                state.joint_angles[0] as f32,
                state.joint_angles[1] as f32,
                state.joint_velocities[0] as f32,
                state.joint_velocities[1] as f32,
            ]);
            actions.push([a[0] as f32, a[1] as f32]);
            state = step_dynamics(config, &state, a);
            if within_target(config, fk(config, state.joint_angles), goal) {
                held += 1;
            } else {
                held = 0;
            }
        }
    }
    Ok(LabeledVideo::new(
        frames,
        labels,
        states,
        actions,
        targets,
        0,
        order.to_vec(),
    ))
}
