//! Optimization loop, Adam, parameter EMA, and `FQPC` checkpoints.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic "FQPC", u32 version (1)
//! u32 n + n bytes   training config as JSON
//! u32 D, D x f32 min, D x f32 max     normalization stats
//! u32 count, count x blob             parameters
//! u32 flag (0/1) [, u32 count, count x blob]   EMA parameters
//! u64 global step, u64 RNG state
//! u32 flag (0/1) [, u32 count, count x blob (first moments),
//!                   u32 count, count x blob (second moments)]   Adam state
//!
//! blob: u32 name length, name bytes (UTF-8), u32 rank, rank x u32 extents,
//!       f32 data (row-major)
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Recording, Tensor};
use crate::error::{Error, Result};
use crate::flowloss::{
    loss_total, Batch, DetachPolicy, LossBreakdown, LossConfig, NoiseDraw, TimeSampling,
};
use crate::policynet::{init_params, ModelDims, VelocityModel};
use crate::spectral::{default_band_split, SimKind, SimMode};
use crate::synthdata::{normalize, read_dataset, ByteReader, Dataset, NormStats, Task};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FQPC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LOSS_LOG_HEADER: &str = "step,fm,freq_velocity,freq_trajectory,total";

fn default_mode() -> SimKind {
    SimKind::FreqAdaptive
}
fn default_lambda() -> f64 {
    1.0
}
fn default_steps() -> u64 {
    5000
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_ema() -> f64 {
    0.999
}
fn default_eval_every() -> u64 {
    1000
}
fn default_hidden() -> usize {
    ModelDims::DEFAULT_HIDDEN
}
fn default_depth() -> usize {
    ModelDims::DEFAULT_DEPTH
}
fn default_time_embed() -> usize {
    ModelDims::DEFAULT_TIME_EMBED
}

/// Everything that determines a training run. Serialized as the JSON accepted
/// by `train --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub dataset_path: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: SimKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ema")]
    pub ema_decay: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    pub checkpoint_path: PathBuf,
    #[serde(default)]
    pub detach_policy: DetachPolicy,
    #[serde(default)]
    pub time_sampling: TimeSampling,
    /// `k*` for the banded modes; `ceil(H/4)` when absent.
    #[serde(default)]
    pub band_cutoff: Option<usize>,
    /// Experimental: squared norms inside the similarity.
    #[serde(default)]
    pub squared_sim: bool,
    #[serde(default = "default_hidden")]
    pub hidden_width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_time_embed")]
    pub time_embed_dim: usize,
    /// Per-step loss CSV; next to the checkpoint when absent.
    #[serde(default)]
    pub loss_log_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Defaults for everything except the paths.
    pub fn new(
        task: Task,
        dataset_path: impl Into<PathBuf>,
        checkpoint_path: impl Into<PathBuf>,
    ) -> Self {
        TrainConfig {
            task,
            dataset_path: dataset_path.into(),
            mode: default_mode(),
            lambda: default_lambda(),
            steps: default_steps(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            seed: 0,
            ema_decay: default_ema(),
            eval_every: default_eval_every(),
            checkpoint_path: checkpoint_path.into(),
            detach_policy: DetachPolicy::default(),
            time_sampling: TimeSampling::default(),
            band_cutoff: None,
            squared_sim: false,
            hidden_width: default_hidden(),
            depth: default_depth(),
            time_embed_dim: default_time_embed(),
            loss_log_path: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay", "must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1/beta2", "must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        self.model_dims()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.sim_mode()
            .validate(self.task.horizon())
            .map_err(|e| Error::Config(format!("band_cutoff: {e}")))?;
        Ok(())
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            obs_dim: self.task.obs_dim(),
            action_dim: self.task.action_dim(),
            horizon: self.task.horizon(),
            hidden: self.hidden_width,
            depth: self.depth,
            time_embed: self.time_embed_dim,
        }
    }

    pub fn sim_mode(&self) -> SimMode {
        SimMode::new(
            self.mode,
            self.band_cutoff
                .unwrap_or_else(|| default_band_split(self.task.horizon())),
        )
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            mode: self.sim_mode(),
            lambda: self.lambda,
            detach: self.detach_policy,
            squared_sim: self.squared_sim,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
        }
    }

    pub fn loss_log(&self) -> PathBuf {
        self.loss_log_path
            .clone()
            .unwrap_or_else(|| self.checkpoint_path.with_extension("losses.csv"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update of a single parameter. `step` counts from 1.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    hp: &AdamConfig,
    step: u64,
) {
    let c1 = 1.0 - hp.beta1.powf(step as f64);
    let c2 = 1.0 - hp.beta2.powf(step as f64);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// First and second moments for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn zeros(model: &VelocityModel) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update to every parameter; nothing changes if any gradient
    /// is non-finite.
    pub fn apply(
        &mut self,
        model: &mut VelocityModel,
        grads: &[Tensor],
        hp: &AdamConfig,
        step: u64,
    ) -> Result<()> {
        if step < 1 {
            return Err(Error::invalid("Adam step index starts at 1"));
        }
        if grads.len() != model.params().len() {
            return Err(Error::DimMismatch {
                what: "gradient count",
                expected: model.params().len(),
                found: grads.len(),
            });
        }
        for ((name, p), g) in model.params().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::invalid(format!(
                    "gradient shape mismatch for `{name}`"
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { name: name.clone() });
            }
        }
        let updated: Vec<Tensor> = model
            .params()
            .iter()
            .zip(grads)
            .enumerate()
            .map(|(i, ((_, p), g))| {
                let mut theta = p.to_vec();
                adam_step(
                    &mut theta,
                    g.data(),
                    &mut self.m[i],
                    &mut self.v[i],
                    hp,
                    step,
                );
                Tensor::new(p.shape().to_vec(), theta)
            })
            .collect::<Result<_>>()?;
        model.set_tensors(updated)
    }
}

/// `ema <- decay * ema + (1 - decay) * theta`, elementwise.
pub fn ema_update(ema: &mut VelocityModel, params: &VelocityModel, decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::invalid(format!("EMA decay {decay} outside [0, 1)")));
    }
    if ema.dims() != params.dims() {
        return Err(Error::invalid("EMA and model dimensions differ"));
    }
    let blended = ema
        .params()
        .iter()
        .zip(params.params())
        .map(|((_, e), (_, p))| {
            let data = e
                .data()
                .iter()
                .zip(p.data())
                .map(|(a, b)| decay * a + (1.0 - decay) * b)
                .collect();
            Tensor::new(e.shape().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    ema.set_tensors(blended)
}

/// Normalized training arrays, gathered into batches by index.
#[derive(Clone, Debug)]
struct TrainData {
    obs: Vec<f64>,
    chunks: Vec<f64>,
    obs_dim: usize,
    chunk_len: usize,
}

impl TrainData {
    fn new(ds: &Dataset, norm: &NormStats) -> Result<Self> {
        let mut obs = Vec::with_capacity(ds.len() * ds.obs_dim);
        let mut chunks = Vec::with_capacity(ds.len() * ds.chunk_len());
        for ep in &ds.episodes {
            obs.extend_from_slice(&ep.obs);
            chunks.extend_from_slice(normalize(&ep.chunk, norm)?.data());
        }
        Ok(TrainData {
            obs,
            chunks,
            obs_dim: ds.obs_dim,
            chunk_len: ds.chunk_len(),
        })
    }

    fn len(&self) -> usize {
        self.chunks.len() / self.chunk_len
    }

    fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let mut obs = Vec::with_capacity(idx.len() * self.obs_dim);
        let mut a1 = Vec::with_capacity(idx.len() * self.chunk_len);
        for &i in idx {
            obs.extend_from_slice(&self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]);
            a1.extend_from_slice(&self.chunks[i * self.chunk_len..(i + 1) * self.chunk_len]);
        }
        Batch::new(
            Tensor::matrix(idx.len(), self.obs_dim, obs)?,
            Tensor::matrix(idx.len(), self.chunk_len, a1)?,
        )
    }
}

fn check_dataset(config: &TrainConfig, ds: &Dataset) -> Result<()> {
    if ds.task != config.task {
        return Err(Error::Config(format!(
            "dataset task `{}` does not match config task `{}`",
            ds.task.as_str(),
            config.task.as_str()
        )));
    }
    let dims = config.model_dims();
    for (what, expected, found) in [
        ("obs_dim", dims.obs_dim, ds.obs_dim),
        ("action_dim", dims.action_dim, ds.action_dim),
        ("horizon", dims.horizon, ds.horizon),
    ] {
        if expected != found {
            return Err(Error::DimMismatch {
                what,
                expected,
                found,
            });
        }
    }
    if ds.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    Ok(())
}

/// Persisted training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub norm: NormStats,
    pub model: VelocityModel,
    pub ema: Option<VelocityModel>,
    pub adam: Option<AdamState>,
    pub step: u64,
    pub rng_state: u64,
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: LossBreakdown,
}

impl LossRecord {
    pub fn csv_line(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{}",
            self.step, l.fm, l.freq_velocity, l.freq_trajectory, l.total
        )
    }
}

/// Single-owner training state; one call to [`Trainer::step`] is one update.
pub struct Trainer {
    config: TrainConfig,
    loss_cfg: LossConfig,
    data: TrainData,
    norm: NormStats,
    model: VelocityModel,
    ema: Option<VelocityModel>,
    adam: AdamState,
    step: u64,
    rng_state: u64,
    epoch_cache: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(config: TrainConfig, ds: &Dataset) -> Result<Self> {
        config.validate()?;
        check_dataset(&config, ds)?;
        let model = init_params(config.model_dims(), config.seed)?;
        let ema = (config.ema_decay > 0.0).then(|| model.clone());
        let adam = AdamState::zeros(&model);
        let rng_state = config.seed;
        Ok(Trainer {
            loss_cfg: config.loss_config(),
            data: TrainData::new(ds, &ds.norm)?,
            norm: ds.norm.clone(),
            model,
            ema,
            adam,
            step: 0,
            rng_state,
            epoch_cache: None,
            config,
        })
    }

    /// Continues a run from a checkpoint. Parameters carry `f32` precision.
    pub fn resume(ckpt: Checkpoint, ds: &Dataset) -> Result<Self> {
        check_dataset(&ckpt.config, ds)?;
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::zeros(&ckpt.model));
        Ok(Trainer {
            loss_cfg: ckpt.config.loss_config(),
            data: TrainData::new(ds, &ckpt.norm)?,
            norm: ckpt.norm,
            model: ckpt.model,
            ema: ckpt.ema,
            adam,
            step: ckpt.step,
            rng_state: ckpt.rng_state,
            epoch_cache: None,
            config: ckpt.config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &VelocityModel {
        &self.model
    }

    pub fn ema(&self) -> Option<&VelocityModel> {
        self.ema.as_ref()
    }

    /// EMA weights when enabled, raw weights otherwise.
    pub fn inference_model(&self) -> &VelocityModel {
        self.ema.as_ref().unwrap_or(&self.model)
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    /// Indices of the batch for the current step: consecutive slices of
    /// per-epoch shuffles of the dataset.
    fn batch_indices(&mut self) -> Vec<usize> {
        let n = self.data.len() as u64;
        let b = self.config.batch_size as u64;
        let start = self.step * b;
        let mut out = Vec::with_capacity(b as usize);
        for pos in start..start + b {
            let epoch = pos / n;
            let perm = match &self.epoch_cache {
                Some((e, p)) if *e == epoch => p,
                _ => {
                    let mut p: Vec<usize> = (0..n as usize).collect();
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_5eed_0000_0000);
                    rng.set_stream(epoch);
                    p.shuffle(&mut rng);
                    self.epoch_cache = Some((epoch, p));
                    &self.epoch_cache.as_ref().unwrap().1
                }
            };
            out.push(perm[(pos % n) as usize]);
        }
        out
    }

    /// Runs one optimization step and returns its losses (evaluated before
    /// the update).
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let idx = self.batch_indices();
        let batch = self.data.batch(&idx)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_state);
        let draw = NoiseDraw::sample(
            &mut rng,
            idx.len(),
            self.data.chunk_len,
            self.config.time_sampling,
            true,
        )?;
        let mut rec = Recording::new();
        let bound = self.model.bind(&mut rec);
        let (total, breakdown) = match loss_total(&mut rec, &bound, &batch, &draw, &self.loss_cfg) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteLoss { step: self.step }),
            Err(e) => return Err(e),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        let grads = rec.backward(&total)?;
        let grads: Vec<Tensor> = bound.params().iter().map(|p| grads.wrt(p)).collect();
        self.adam
            .apply(&mut self.model, &grads, &self.config.adam(), self.step + 1)?;
        if let Some(ema) = &mut self.ema {
            ema_update(ema, &self.model, self.config.ema_decay)?;
        }
        self.step += 1;
        self.rng_state = ChaCha8Rng::seed_from_u64(self.rng_state).next_u64();
        Ok(breakdown)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            norm: self.norm.clone(),
            model: self.model.clone(),
            ema: self.ema.clone(),
            adam: Some(self.adam.clone()),
            step: self.step,
            rng_state: self.rng_state,
        }
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

/// Trains on an in-memory dataset without touching the filesystem.
pub fn train_on(config: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), ds)?;
    let mut log = Vec::with_capacity(config.steps as usize);
    while trainer.global_step() < config.steps {
        let step = trainer.global_step();
        let loss = trainer.step()?;
        log.push(LossRecord { step, loss });
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log,
    })
}

/// Full run from a config: reads the dataset, writes the checkpoint every
/// `eval_every` steps and at the end, and writes the loss log. A non-finite
/// loss aborts the run after saving the last good state.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let ds = read_dataset(&config.dataset_path)?;
    let mut trainer = Trainer::new(config.clone(), &ds)?;
    let log_path = config.loss_log();
    let mut log_file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    let mut log = Vec::with_capacity(config.steps as usize);
    while trainer.global_step() < config.steps {
        let step = trainer.global_step();
        let loss = match trainer.step() {
            Ok(l) => l,
            Err(e) => {
                save_checkpoint(&trainer.checkpoint(), &config.checkpoint_path)?;
                return Err(e);
            }
        };
        let rec = LossRecord { step, loss };
        writeln!(log_file, "{}", rec.csv_line()).map_err(|e| Error::io(&log_path, e))?;
        log.push(rec);
        let done = trainer.global_step();
        if config.eval_every > 0 && done % config.eval_every == 0 && done < config.steps {
            save_checkpoint(&trainer.checkpoint(), &config.checkpoint_path)?;
        }
    }
    let checkpoint = trainer.checkpoint();
    save_checkpoint(&checkpoint, &config.checkpoint_path)?;
    Ok(TrainOutcome { checkpoint, log })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blobs(out: &mut Vec<u8>, blobs: &[(String, Tensor)]) {
    put_u32(out, blobs.len() as u32);
    for (name, t) in blobs {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.rank() as u32);
        for &e in t.shape() {
            put_u32(out, e as u32);
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

fn read_blobs(r: &mut ByteReader<'_>) -> Result<Vec<(String, Tensor)>> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.offset();
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            detail: "parameter name is not UTF-8".into(),
        })?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = r.f32s(numel)?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: at,
            detail: e.to_string(),
        })?;
        out.push((name, t));
    }
    Ok(out)
}

fn moment_blobs(model: &VelocityModel, moments: &[Vec<f64>]) -> Vec<(String, Tensor)> {
    model
        .params()
        .iter()
        .zip(moments)
        .map(|((name, p), m)| {
            (
                name.clone(),
                Tensor::new(p.shape().to_vec(), m.clone()).expect("same shape"),
            )
        })
        .collect()
}

impl Checkpoint {
    /// EMA weights when present.
    pub fn inference_model(&self) -> &VelocityModel {
        self.ema.as_ref().unwrap_or(&self.model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        put_u32(&mut out, cfg.len() as u32);
        out.extend_from_slice(&cfg);
        put_u32(&mut out, self.norm.dims() as u32);
        for v in self.norm.min.iter().chain(&self.norm.max) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        put_blobs(&mut out, self.model.params());
        match &self.ema {
            Some(ema) => {
                put_u32(&mut out, 1);
                put_blobs(&mut out, ema.params());
            }
            None => put_u32(&mut out, 0),
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng_state.to_le_bytes());
        match &self.adam {
            Some(adam) => {
                put_u32(&mut out, 1);
                put_blobs(&mut out, &moment_blobs(&self.model, &adam.m));
                put_blobs(&mut out, &moment_blobs(&self.model, &adam.v));
            }
            None => put_u32(&mut out, 0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let at = r.offset();
        let len = r.u32()? as usize;
        let config: TrainConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format {
                offset: at,
                detail: format!("config: {e}"),
            })?;
        let dims = config.model_dims();
        let d = r.u32()? as usize;
        let norm = NormStats {
            min: r.f32s(d)?,
            max: r.f32s(d)?,
        };
        let at = r.offset();
        let as_format = |e: Error| Error::Format {
            offset: at,
            detail: e.to_string(),
        };
        let model = VelocityModel::from_params(dims, read_blobs(&mut r)?).map_err(as_format)?;
        let ema = match r.u32()? {
            0 => None,
            1 => Some(VelocityModel::from_params(dims, read_blobs(&mut r)?).map_err(as_format)?),
            f => {
                return Err(Error::Format {
                    offset: r.offset() - 4,
                    detail: format!("bad EMA flag {f}"),
                })
            }
        };
        let step = r.u64()?;
        let rng_state = r.u64()?;
        let adam = match r.u32()? {
            0 => None,
            1 => {
                let m = read_blobs(&mut r)?;
                let v = read_blobs(&mut r)?;
                let flat = |b: Vec<(String, Tensor)>| {
                    b.into_iter().map(|(_, t)| t.to_vec()).collect::<Vec<_>>()
                };
                let state = AdamState {
                    m: flat(m),
                    v: flat(v),
                };
                if state.m.len() != model.params().len() || state.v.len() != model.params().len() {
                    return Err(Error::Format {
                        offset: r.offset(),
                        detail: "optimizer state does not match parameters".into(),
                    });
                }
                Some(state)
            }
            f => {
                return Err(Error::Format {
                    offset: r.offset() - 4,
                    detail: format!("bad optimizer flag {f}"),
                })
            }
        };
        if r.remaining() != 0 {
            return Err(Error::Format {
                offset: r.offset(),
                detail: format!("{} trailing bytes", r.remaining()),
            });
        }
        Ok(Checkpoint {
            config,
            norm,
            model,
            ema,
            adam,
            step,
            rng_state,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
