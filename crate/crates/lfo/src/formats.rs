//! LFOD datasets and LFOM checkpoints.
//!
//! Both share one container: 4-byte magic, `u32` LE version, `u32` LE header
//! length, a UTF-8 JSON header, then a little-endian `f32` payload whose
//! layout the header declares.

use std::path::Path;

use lfo_core::diffnet::{NetSpec, ParamVector};
use lfo_core::localizer::{BaselineModel, LocalizerSpec, MetaMode, MetaModel};
use lfo_core::normalize::Normalization;
use lfo_core::reacher::{Frame, Target};
use lfo_core::reward::RewardModel;
use lfo_core::rl::PolicyModel;
use lfo_core::taskgen::{DatasetManifest, Label, LabeledVideo};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"LFOD";
pub const MODEL_MAGIC: [u8; 4] = *b"LFOM";
pub const FORMAT_VERSION: u32 = 1;

fn encode_container<H: Serialize>(magic: [u8; 4], header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let json =
        serde_json::to_vec(header).map_err(|e| HarnessError::Format(format!("header: {e}")))?;
    let len =
        u32::try_from(json.len()).map_err(|_| HarnessError::Format("header too large".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| HarnessError::Corruption {
            offset: bytes.len() as u64,
            what: format!("file ends before the {what}"),
        })
}

/// Header and payload reader of a container with `magic`.
fn decode_container<'a, H: DeserializeOwned>(
    magic: [u8; 4],
    bytes: &'a [u8],
) -> Result<(H, Payload<'a>)> {
    if bytes.len() < 4 {
        return Err(HarnessError::Corruption {
            offset: bytes.len() as u64,
            what: "file ends before the magic".into(),
        });
    }
    if bytes[..4] != magic {
        return Err(HarnessError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(bytes, 4, "version")?;
    if version != FORMAT_VERSION {
        return Err(HarnessError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = read_u32(bytes, 8, "header length")? as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| HarnessError::Corruption {
            offset: bytes.len() as u64,
            what: format!(
                "header declares {len} bytes but only {} remain",
                bytes.len().saturating_sub(12)
            ),
        })?;
    let header =
        serde_json::from_slice(json).map_err(|e| HarnessError::Format(format!("header: {e}")))?;
    Ok((
        header,
        Payload {
            bytes,
            pos: 12 + len,
        },
    ))
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Payload<'_> {
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let need = n * 4;
        let chunk =
            self.bytes
                .get(self.pos..self.pos + need)
                .ok_or_else(|| HarnessError::Corruption {
                    offset: self.bytes.len() as u64,
                    what: format!(
                        "{what} needs {need} bytes from offset {} but the file ends",
                        self.pos
                    ),
                })?;
        self.pos += need;
        Ok(chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(HarnessError::Corruption {
                offset: self.pos as u64,
                what: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Videos plus the manifest that produced them, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Option<DatasetManifest>,
    pub videos: Vec<LabeledVideo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    manifest: Option<DatasetManifest>,
    videos: Vec<VideoHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoHeader {
    frames: usize,
    width: usize,
    height: usize,
    frame_labels: Vec<Label>,
    task_id: usize,
    order: Vec<usize>,
    targets: Vec<Target>,
}

pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>> {
    let mut videos = Vec::with_capacity(data.videos.len());
    for (i, v) in data.videos.iter().enumerate() {
        let (width, height) = v.frames.first().map_or((0, 0), |f| (f.width, f.height));
        let n = v.frames.len();
        if v.frame_labels.len() != n || v.states.len() != n || v.actions.len() != n {
            return Err(HarnessError::Format(format!(
                "video {i} has ragged per-frame arrays"
            )));
        }
        if v.frames
            .iter()
            .any(|f| f.width != width || f.height != height || f.pixels.len() != width * height * 3)
        {
            return Err(HarnessError::Format(format!("video {i} mixes frame sizes")));
        }
        videos.push(VideoHeader {
            frames: n,
            width,
            height,
            frame_labels: v.frame_labels.clone(),
            task_id: v.task_id,
            order: v.order.clone(),
            targets: v.targets.clone(),
        });
    }
    let mut payload = Vec::new();
    for v in &data.videos {
        for f in &v.frames {
            push_f32s(&mut payload, f.pixels.iter().copied());
        }
    }
    for v in &data.videos {
        push_f32s(&mut payload, v.states.iter().flatten().copied());
    }
    for v in &data.videos {
        push_f32s(&mut payload, v.actions.iter().flatten().copied());
    }
    let header = DatasetHeader {
        manifest: data.manifest.clone(),
        videos,
    };
    encode_container(DATASET_MAGIC, &header, &payload)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (header, mut payload): (DatasetHeader, _) = decode_container(DATASET_MAGIC, bytes)?;
    let mut frames_per_video = Vec::with_capacity(header.videos.len());
    for (i, h) in header.videos.iter().enumerate() {
        if h.frame_labels.len() != h.frames {
            return Err(HarnessError::Format(format!(
                "video {i}: label count differs from frame count"
            )));
        }
        let len = h.width * h.height * 3;
        let flat = payload.f32s(h.frames * len, &format!("video {i} pixels"))?;
        let frames: Vec<Frame> = if len == 0 {
            (0..h.frames)
                .map(|_| Frame {
                    width: h.width,
                    height: h.height,
                    pixels: Vec::new(),
                })
                .collect()
        } else {
            flat.chunks_exact(len)
                .map(|p| Frame {
                    width: h.width,
                    height: h.height,
                    pixels: p.to_vec(),
                })
                .collect()
        };
        frames_per_video.push(frames);
    }
    let mut states = Vec::with_capacity(header.videos.len());
    for (i, h) in header.videos.iter().enumerate() {
        let flat = payload.f32s(h.frames * 4, &format!("video {i} states"))?;
        states.push(
            flat.chunks_exact(4)
                .map(|s| [s[0], s[1], s[2], s[3]])
                .collect::<Vec<_>>(),
        );
    }
    let mut actions = Vec::with_capacity(header.videos.len());
    for (i, h) in header.videos.iter().enumerate() {
        let flat = payload.f32s(h.frames * 2, &format!("video {i} actions"))?;
        actions.push(
            flat.chunks_exact(2)
                .map(|a| [a[0], a[1]])
                .collect::<Vec<_>>(),
        );
    }
    payload.finish()?;
    let videos = header
        .videos
        .into_iter()
        .zip(frames_per_video)
        .zip(states.into_iter().zip(actions))
        .map(|((h, frames), (s, a))| {
            LabeledVideo::new(frames, h.frame_labels, s, a, h.targets, h.task_id, h.order)
        })
        .collect();
    Ok(Dataset {
        manifest: header.manifest,
        videos,
    })
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_file(path, &encode_dataset(data)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}

/// Any model the pipeline persists.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Localizer(MetaModel),
    Baseline(BaselineModel),
    Reward(RewardModel),
    Policy(PolicyModel),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Localizer(_) => "localizer",
            Checkpoint::Baseline(_) => "baseline",
            Checkpoint::Reward(_) => "reward",
            Checkpoint::Policy(_) => "policy",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelHeader {
    Localizer {
        spec: LocalizerSpec,
        mode: MetaMode,
        normalization: Normalization,
        seed: u64,
        iterations: usize,
        inner_alpha: f64,
        spec_hash: u64,
        params: usize,
    },
    Baseline {
        spec: LocalizerSpec,
        normalization: Normalization,
        seed: u64,
        spec_hash: u64,
        params: usize,
    },
    Reward {
        embed_spec: NetSpec,
        predictor_spec: NetSpec,
        normalization: Normalization,
        subtask_id: Option<usize>,
        /// Absent when the model was never trained.
        final_loss: Option<f64>,
        seed: u64,
        embed_hash: u64,
        predictor_hash: u64,
        embed_params: usize,
        predictor_params: usize,
    },
    Policy {
        mean_spec: NetSpec,
        value_spec: NetSpec,
        mean_hash: u64,
        value_hash: u64,
        mean_params: usize,
        value_params: usize,
    },
}

impl ModelHeader {
    fn kind(&self) -> &'static str {
        match self {
            ModelHeader::Localizer { .. } => "localizer",
            ModelHeader::Baseline { .. } => "baseline",
            ModelHeader::Reward { .. } => "reward",
            ModelHeader::Policy { .. } => "policy",
        }
    }
}

pub fn encode_checkpoint(model: &Checkpoint) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let header = match model {
        Checkpoint::Localizer(m) => {
            push_f32s(&mut payload, m.theta.values.iter().copied());
            ModelHeader::Localizer {
                spec: m.spec.clone(),
                mode: m.trained_with,
                normalization: m.normalization.clone(),
                seed: m.seed,
                iterations: m.iterations,
                inner_alpha: m.inner_alpha,
                spec_hash: m.theta.spec_hash,
                params: m.theta.len(),
            }
        }
        Checkpoint::Baseline(m) => {
            push_f32s(&mut payload, m.params.values.iter().copied());
            ModelHeader::Baseline {
                spec: m.spec.clone(),
                normalization: m.normalization.clone(),
                seed: m.seed,
                spec_hash: m.params.spec_hash,
                params: m.params.len(),
            }
        }
        Checkpoint::Reward(m) => {
            push_f32s(&mut payload, m.embed_params.values.iter().copied());
            push_f32s(&mut payload, m.predictor_params.values.iter().copied());
            ModelHeader::Reward {
                embed_spec: m.embed_spec.clone(),
                predictor_spec: m.predictor_spec.clone(),
                normalization: m.normalization.clone(),
                subtask_id: m.subtask_id,
                final_loss: m.final_loss.is_finite().then_some(m.final_loss),
                seed: m.seed,
                embed_hash: m.embed_params.spec_hash,
                predictor_hash: m.predictor_params.spec_hash,
                embed_params: m.embed_params.len(),
                predictor_params: m.predictor_params.len(),
            }
        }
        Checkpoint::Policy(m) => {
            push_f32s(&mut payload, m.mean_params.values.iter().copied());
            push_f32s(&mut payload, m.log_std);
            push_f32s(&mut payload, m.value_params.values.iter().copied());
            ModelHeader::Policy {
                mean_spec: m.mean_spec.clone(),
                value_spec: m.value_spec.clone(),
                mean_hash: m.mean_params.spec_hash,
                value_hash: m.value_params.spec_hash,
                mean_params: m.mean_params.len(),
                value_params: m.value_params.len(),
            }
        }
    };
    encode_container(MODEL_MAGIC, &header, &payload)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (header, mut p): (ModelHeader, _) = decode_container(MODEL_MAGIC, bytes)?;
    let pv = |values: Vec<f32>, spec_hash: u64| ParamVector { values, spec_hash };
    let model = match header {
        ModelHeader::Localizer {
            spec,
            mode,
            normalization,
            seed,
            iterations,
            inner_alpha,
            spec_hash,
            params,
        } => Checkpoint::Localizer(MetaModel {
            theta: pv(p.f32s(params, "localizer parameters")?, spec_hash),
            spec,
            inner_alpha,
            trained_with: mode,
            normalization,
            seed,
            iterations,
        }),
        ModelHeader::Baseline {
            spec,
            normalization,
            seed,
            spec_hash,
            params,
        } => Checkpoint::Baseline(BaselineModel {
            params: pv(p.f32s(params, "baseline parameters")?, spec_hash),
            spec,
            normalization,
            seed,
        }),
        ModelHeader::Reward {
            embed_spec,
            predictor_spec,
            normalization,
            subtask_id,
            final_loss,
            seed,
            embed_hash,
            predictor_hash,
            embed_params,
            predictor_params,
        } => Checkpoint::Reward(RewardModel {
            embed_params: pv(p.f32s(embed_params, "embedder parameters")?, embed_hash),
            predictor_params: pv(
                p.f32s(predictor_params, "predictor parameters")?,
                predictor_hash,
            ),
            embed_spec,
            predictor_spec,
            normalization,
            subtask_id,
            final_loss: final_loss.unwrap_or(f64::NAN),
            seed,
        }),
        ModelHeader::Policy {
            mean_spec,
            value_spec,
            mean_hash,
            value_hash,
            mean_params,
            value_params,
        } => {
            let mean = pv(p.f32s(mean_params, "policy mean parameters")?, mean_hash);
            let ls = p.f32s(2, "policy log std")?;
            let value = pv(p.f32s(value_params, "value parameters")?, value_hash);
            Checkpoint::Policy(PolicyModel {
                mean_spec,
                mean_params: mean,
                log_std: [ls[0], ls[1]],
                value_spec,
                value_params: value,
            })
        }
    };
    p.finish()?;
    Ok(model)
}

/// Kind declared by a checkpoint's header.
pub fn checkpoint_kind(bytes: &[u8]) -> Result<String> {
    let (header, _): (ModelHeader, _) = decode_container(MODEL_MAGIC, bytes)?;
    Ok(header.kind().to_string())
}

pub fn save_checkpoint(path: &Path, model: &Checkpoint) -> Result<()> {
    write_file(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

fn kind_error(expected: &str, found: &Checkpoint) -> HarnessError {
    HarnessError::Kind {
        expected: expected.into(),
        found: found.kind().into(),
    }
}

pub fn load_localizer(path: &Path) -> Result<MetaModel> {
    match load_checkpoint(path)? {
        Checkpoint::Localizer(m) => Ok(m),
        other => Err(kind_error("localizer", &other)),
    }
}

pub fn load_baseline(path: &Path) -> Result<BaselineModel> {
    match load_checkpoint(path)? {
        Checkpoint::Baseline(m) => Ok(m),
        other => Err(kind_error("baseline", &other)),
    }
}

pub fn load_reward(path: &Path) -> Result<RewardModel> {
    match load_checkpoint(path)? {
        Checkpoint::Reward(m) => Ok(m),
        other => Err(kind_error("reward", &other)),
    }
}

pub fn load_policy(path: &Path) -> Result<PolicyModel> {
    match load_checkpoint(path)? {
        Checkpoint::Policy(m) => Ok(m),
        other => Err(kind_error("policy", &other)),
    }
}
