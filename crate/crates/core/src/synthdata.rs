//! Synthetic expert demonstrations, min-max normalization, and the `FQPD`
//! dataset file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0   magic "FQPD"
//! 4   u32 format version (1)
//! 8   u32 task id
//! 12  u32 O, 16 u32 D, 20 u32 H
//! 24  u32 episode count
//! 28  u32 reserved (zero)
//! 32  u64 generator seed
//! 40  D x f32 per-dimension min, then D x f32 per-dimension max
//!     per episode: u32 mode_id, O x f32 obs, H*D x f32 chunk (horizon-major)
//! ```
//!
//! All values are rounded to `f32` when generated, so a dataset read back from
//! disk is bit-identical to the one that was written.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunk::ActionChunk;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"FQPD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

/// Lateral offset of the bimodal detour at its peak.
pub const DETOUR_OFFSET: f64 = 0.35;
pub const MIN_BIMODAL_GOAL: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Straight reach to a goal.
    Reach,
    /// Detour left or right around an obstacle halfway to the goal.
    Bimodal,
    /// Reach plus a gripper channel that switches sign at a random phase.
    Gripper,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Reach, Task::Bimodal, Task::Gripper];

    pub fn id(self) -> u32 {
        match self {
            Task::Reach => 0,
            Task::Bimodal => 1,
            Task::Gripper => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.id() == id)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Reach => "reach",
            Task::Bimodal => "bimodal",
            Task::Gripper => "gripper",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Task::Reach | Task::Bimodal => 2,
            Task::Gripper => 3,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            Task::Reach | Task::Bimodal => 2,
            Task::Gripper => 3,
        }
    }

    pub fn horizon(self) -> usize {
        match self {
            Task::Reach | Task::Bimodal => 16,
            Task::Gripper => 32,
        }
    }

    pub fn num_modes(self) -> u32 {
        match self {
            Task::Bimodal => 2,
            _ => 1,
        }
    }

    /// Draws an observation from the task's distribution.
    pub fn sample_obs<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        let mut goal = || [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        match self {
            Task::Reach => goal().to_vec(),
            Task::Bimodal => loop {
                let g = goal();
                if g[0].hypot(g[1]) >= MIN_BIMODAL_GOAL {
                    break g.to_vec();
                }
            },
            Task::Gripper => {
                let g = goal();
                let phase = rng.random_range(0.25..=0.75);
                vec![g[0], g[1], phase]
            }
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task `{s}`")))
    }
}

/// Expert chunk for `obs` in the given mode at an arbitrary horizon.
pub fn expert_chunk(task: Task, obs: &[f64], mode: u32, horizon: usize) -> Result<ActionChunk> {
    if obs.len() != task.obs_dim() {
        return Err(Error::DimMismatch {
            what: "observation",
            expected: task.obs_dim(),
            found: obs.len(),
        });
    }
    if mode >= task.num_modes() {
        return Err(Error::invalid(format!(
            "mode {mode} out of range for {}",
            task.as_str()
        )));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    let hf = horizon as f64;
    let (gx, gy) = (obs[0], obs[1]);
    let mut data = Vec::with_capacity(horizon * task.action_dim());
    for h in 0..horizon {
        let frac = (h + 1) as f64 / hf;
        match task {
            Task::Reach => data.extend([frac * gx, frac * gy]),
            Task::Bimodal => {
                let norm = gx.hypot(gy);
                let (nx, ny) = if norm > 0.0 {
                    (-gy / norm, gx / norm)
                } else {
                    (0.0, 0.0)
                };
                let sign = if mode == 0 { 1.0 } else { -1.0 };
                let lateral = sign * DETOUR_OFFSET * 0.5 * (1.0 - (2.0 * PI * frac).cos());
                data.extend([frac * gx + lateral * nx, frac * gy + lateral * ny]);
            }
            Task::Gripper => {
                let grip = if (h as f64) / hf < obs[2] { -1.0 } else { 1.0 };
                data.extend([frac * gx, frac * gy, grip]);
            }
        }
    }
    ActionChunk::new(horizon, task.action_dim(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub obs: Vec<f64>,
    pub chunk: ActionChunk,
    /// Expert mode label; evaluation only.
    pub mode_id: u32,
}

/// Per-action-dimension range used to map actions onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Range over every step of every chunk; constant dimensions are widened
    /// by `1e-6` on each side. Bounds are `f32`-representable.
    pub fn from_chunks<'a>(chunks: impl IntoIterator<Item = &'a ActionChunk>) -> Result<Self> {
        let mut iter = chunks.into_iter().peekable();
        let dims = iter
            .peek()
            .map(|c| c.dims())
            .ok_or_else(|| Error::invalid("no chunks for normalization stats"))?;
        let mut min = vec![f64::INFINITY; dims];
        let mut max = vec![f64::NEG_INFINITY; dims];
        for c in iter {
            for h in 0..c.horizon() {
                for (d, &v) in c.row(h).iter().enumerate() {
                    min[d] = min[d].min(v);
                    max[d] = max[d].max(v);
                }
            }
        }
        for d in 0..dims {
            if min[d] >= max[d] {
                min[d] -= 1e-6;
                max[d] += 1e-6;
            }
            min[d] = round_down_f32(min[d]);
            max[d] = round_up_f32(max[d]);
        }
        let stats = NormStats { min, max };
        stats.validate()?;
        Ok(stats)
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() || self.min.is_empty() {
            return Err(Error::invalid(
                "normalization stats need matching non-empty bounds",
            ));
        }
        for (d, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(lo < hi) {
                return Err(Error::invalid(format!(
                    "degenerate normalization range in dim {d}"
                )));
            }
        }
        Ok(())
    }
}

fn round_down_f32(v: f64) -> f64 {
    let f = v as f32;
    if f as f64 > v {
        f.next_down() as f64
    } else {
        f as f64
    }
}

fn round_up_f32(v: f64) -> f64 {
    let f = v as f32;
    if (f as f64) < v {
        f.next_up() as f64
    } else {
        f as f64
    }
}

fn check_stats(chunk: &ActionChunk, stats: &NormStats) -> Result<()> {
    stats.validate()?;
    if chunk.dims() != stats.dims() {
        return Err(Error::DimMismatch {
            what: "action dims",
            expected: stats.dims(),
            found: chunk.dims(),
        });
    }
    Ok(())
}

/// Affine map sending `min` to -1 and `max` to +1 per dimension.
pub fn normalize(chunk: &ActionChunk, stats: &NormStats) -> Result<ActionChunk> {
    check_stats(chunk, stats)?;
    let d = chunk.dims();
    let data = chunk
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = (stats.min[i % d], stats.max[i % d]);
            2.0 * (v - lo) / (hi - lo) - 1.0
        })
        .collect();
    ActionChunk::new(chunk.horizon(), d, data)
}

pub fn denormalize(chunk: &ActionChunk, stats: &NormStats) -> Result<ActionChunk> {
    check_stats(chunk, stats)?;
    let d = chunk.dims();
    let data = chunk
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = (stats.min[i % d], stats.max[i % d]);
            (v + 1.0) * 0.5 * (hi - lo) + lo
        })
        .collect();
    ActionChunk::new(chunk.horizon(), d, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub seed: u64,
    pub norm: NormStats,
    pub episodes: Vec<Episode>,
}

fn to_f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// `n` episodes; episode `i` is drawn from its own stream seeded by `seed ^ i`.
pub fn gen_dataset(task: Task, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one episode"));
    }
    let episodes = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            let obs: Vec<f64> = task
                .sample_obs(&mut rng)
                .into_iter()
                .map(to_f32_precision)
                .collect();
            let mode_id = if task.num_modes() > 1 {
                u32::from(rng.random_bool(0.5))
            } else {
                0
            };
            let raw = expert_chunk(task, &obs, mode_id, task.horizon())?;
            let chunk = ActionChunk::new(
                raw.horizon(),
                raw.dims(),
                raw.data().iter().copied().map(to_f32_precision).collect(),
            )?;
            Ok(Episode {
                obs,
                chunk,
                mode_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = NormStats::from_chunks(episodes.iter().map(|e| &e.chunk))?;
    Ok(Dataset {
        task,
        obs_dim: task.obs_dim(),
        action_dim: task.action_dim(),
        horizon: task.horizon(),
        seed,
        norm,
        episodes,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn chunk_len(&self) -> usize {
        self.horizon * self.action_dim
    }

    /// Exact encoded size for this dataset's dimensions and episode count.
    pub fn encoded_len(&self) -> usize {
        encoded_len(self.obs_dim, self.action_dim, self.horizon, self.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(DATASET_MAGIC);
        for v in [
            DATASET_VERSION,
            self.task.id(),
            self.obs_dim as u32,
            self.action_dim as u32,
            self.horizon as u32,
            self.episodes.len() as u32,
            0,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in self.norm.min.iter().chain(&self.norm.max) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for ep in &self.episodes {
            out.extend_from_slice(&ep.mode_id.to_le_bytes());
            for v in ep.obs.iter().chain(ep.chunk.data()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let task_id = r.u32()?;
        let task = Task::from_id(task_id).ok_or(Error::Format {
            offset: 8,
            detail: format!("unknown task id {task_id}"),
        })?;
        let obs_dim = r.u32()? as usize;
        let action_dim = r.u32()? as usize;
        let horizon = r.u32()? as usize;
        let count = r.u32()? as usize;
        let _reserved = r.u32()?;
        let seed = r.u64()?;
        if obs_dim == 0 || action_dim == 0 || horizon == 0 {
            return Err(Error::Format {
                offset: 12,
                detail: "zero dimension in header".into(),
            });
        }
        let expected = encoded_len(obs_dim, action_dim, horizon, count);
        if bytes.len() != expected {
            return Err(Error::Format {
                offset: bytes.len().min(expected) as u64,
                detail: format!("expected {expected} bytes, file has {}", bytes.len()),
            });
        }
        let min = r.f32s(action_dim)?;
        let max = r.f32s(action_dim)?;
        let norm = NormStats { min, max };
        let mut episodes = Vec::with_capacity(count);
        for _ in 0..count {
            let mode_id = r.u32()?;
            let obs = r.f32s(obs_dim)?;
            let chunk = ActionChunk::new(horizon, action_dim, r.f32s(horizon * action_dim)?)?;
            episodes.push(Episode {
                obs,
                chunk,
                mode_id,
            });
        }
        Ok(Dataset {
            task,
            obs_dim,
            action_dim,
            horizon,
            seed,
            norm,
            episodes,
        })
    }
}

pub fn encoded_len(obs_dim: usize, action_dim: usize, horizon: usize, count: usize) -> usize {
    HEADER_LEN + 8 * action_dim + count * (4 + 4 * obs_dim + 4 * horizon * action_dim)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ds.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}

/// Little-endian cursor that reports the byte offset of any shortfall.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!("truncated: need {n} bytes, {} left", self.remaining()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }
}
