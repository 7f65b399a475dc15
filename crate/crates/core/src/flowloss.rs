//! Training objectives: conditional flow matching along straight noise-to-action
//! paths, and the two-term consistency constraint between velocities at two
//! flow times.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chunk::ActionChunk;
use crate::diffcore::{Recording, Tensor};
use crate::error::{Error, Result};
use crate::policynet::VelocityField;
use crate::spectral::{sim_batch, SimKind, SimMode};

/// Three flow times with `0 <= r < s < u <= 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeTriple {
    r: f64,
    s: f64,
    u: f64,
}

impl TimeTriple {
    pub fn new(r: f64, s: f64, u: f64) -> Result<Self> {
        if !(0.0 <= r && r < s && s < u && u <= 1.0) {
            return Err(Error::invalid(format!(
                "time triple ({r}, {s}, {u}) is not strictly ordered in [0, 1]"
            )));
        }
        Ok(TimeTriple { r, s, u })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn u(&self) -> f64 {
        self.u
    }
}

/// Three independent uniforms, sorted; redrawn on ties.
pub fn sample_time_triple<R: Rng + ?Sized>(rng: &mut R) -> TimeTriple {
    loop {
        let mut v: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        v.sort_by(f64::total_cmp);
        if let Ok(t) = TimeTriple::new(v[0], v[1], v[2]) {
            return t;
        }
    }
}

pub fn interpolate(a0: &ActionChunk, a1: &ActionChunk, t: f64) -> Result<ActionChunk> {
    check_pair(a0, a1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    let data = a0
        .data()
        .iter()
        .zip(a1.data())
        .map(|(x0, x1)| (1.0 - t) * x0 + t * x1)
        .collect();
    ActionChunk::new(a0.horizon(), a0.dims(), data)
}

/// Constant target velocity of the straight path from `a0` to `a1`.
pub fn fm_target(a0: &ActionChunk, a1: &ActionChunk) -> Result<ActionChunk> {
    check_pair(a0, a1)?;
    let data = a1
        .data()
        .iter()
        .zip(a0.data())
        .map(|(x1, x0)| x1 - x0)
        .collect();
    ActionChunk::new(a0.horizon(), a0.dims(), data)
}

fn check_pair(a0: &ActionChunk, a1: &ActionChunk) -> Result<()> {
    if !a0.same_shape(a1) {
        return Err(Error::Shape {
            op: "interpolate",
            shapes: vec![vec![a0.horizon(), a0.dims()], vec![a1.horizon(), a1.dims()]],
        });
    }
    Ok(())
}

/// Row-wise `(1 - t_b) a0_b + t_b a1_b` on `[B, N]` constants.
fn interpolate_rows(a0: &Tensor, a1: &Tensor, t: &[f64]) -> Result<Tensor> {
    let n = a0.shape()[1];
    let mut out = Vec::with_capacity(a0.numel());
    for ((r0, r1), &tb) in a0
        .data()
        .chunks_exact(n)
        .zip(a1.data().chunks_exact(n))
        .zip(t)
    {
        out.extend(r0.iter().zip(r1).map(|(x0, x1)| (1.0 - tb) * x0 + tb * x1));
    }
    Tensor::matrix(t.len(), n, out)
}

/// Which branch of the consistency pair is a constant target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetachPolicy {
    /// The branch at the larger time `s` is the target.
    #[default]
    DetachLarger,
    DetachNone,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    #[default]
    Uniform,
    /// `Beta(1.5, 1)`, skewed towards the data end.
    Beta,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub mode: SimMode,
    pub lambda: f64,
    pub detach: DetachPolicy,
    pub squared_sim: bool,
}

impl LossConfig {
    pub fn new(mode: SimMode) -> Self {
        LossConfig {
            mode,
            lambda: 1.0,
            detach: DetachPolicy::DetachLarger,
            squared_sim: false,
        }
    }
}

/// Conditioning observations and expert chunks, `[B, O]` and `[B, H*D]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Tensor,
    pub a1: Tensor,
}

impl Batch {
    pub fn new(obs: Tensor, a1: Tensor) -> Result<Self> {
        if obs.rank() != 2 || a1.rank() != 2 || obs.shape()[0] != a1.shape()[0] {
            return Err(Error::Shape {
                op: "batch",
                shapes: vec![obs.shape().to_vec(), a1.shape().to_vec()],
            });
        }
        Ok(Batch { obs, a1 })
    }

    pub fn len(&self) -> usize {
        self.a1.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random inputs for one evaluation of the objective: per-sample noise and
/// flow time, plus one time triple for the whole batch.
#[derive(Clone, Debug)]
pub struct NoiseDraw {
    pub a0: Tensor,
    pub t: Vec<f64>,
    pub triple: Option<TimeTriple>,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        batch: usize,
        chunk_len: usize,
        sampling: TimeSampling,
        with_triple: bool,
    ) -> Result<Self> {
        let a0: Vec<f64> = (0..batch * chunk_len)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let t = match sampling {
            TimeSampling::Uniform => (0..batch).map(|_| rng.random::<f64>()).collect(),
            TimeSampling::Beta => {
                let beta = Beta::new(1.5, 1.0).expect("valid beta parameters");
                (0..batch).map(|_| beta.sample(rng)).collect()
            }
        };
        let triple = with_triple.then(|| sample_time_triple(rng));
        Ok(NoiseDraw {
            a0: Tensor::matrix(batch, chunk_len, a0)?,
            t,
            triple,
        })
    }
}

fn check_batch(field: &impl VelocityField, batch: &Batch, a0: &Tensor) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let hd = field.horizon() * field.action_dim();
    if batch.a1.shape() != [batch.len(), hd] || a0.shape() != batch.a1.shape() {
        return Err(Error::Shape {
            op: "loss",
            shapes: vec![batch.a1.shape().to_vec(), a0.shape().to_vec(), vec![hd]],
        });
    }
    Ok(())
}

/// Batch mean of `||v(t, a_t) - (a1 - a0)||_2`.
pub fn loss_fm(
    rec: &mut Recording,
    field: &impl VelocityField,
    batch: &Batch,
    a0: &Tensor,
    t: &[f64],
) -> Result<Tensor> {
    check_batch(field, batch, a0)?;
    if t.len() != batch.len() {
        return Err(Error::DimMismatch {
            what: "flow times",
            expected: batch.len(),
            found: t.len(),
        });
    }
    let a_t = interpolate_rows(a0, &batch.a1, t)?;
    let target = rec.sub(&batch.a1, a0)?;
    let v = field.velocity(rec, &batch.obs, &a_t, t)?;
    let diff = rec.sub(&v, &target)?;
    let norms = rec.norm_axis(&diff, 1)?;
    rec.mean(&norms)
}

/// Velocity and trajectory consistency terms, each a batch mean.
pub fn loss_freq(
    rec: &mut Recording,
    field: &impl VelocityField,
    batch: &Batch,
    a0: &Tensor,
    triple: TimeTriple,
    cfg: &LossConfig,
) -> Result<(Tensor, Tensor)> {
    check_batch(field, batch, a0)?;
    if cfg.mode.kind == SimKind::None {
        return Ok((Tensor::scalar(0.0), Tensor::scalar(0.0)));
    }
    let (h, d) = (field.horizon(), field.action_dim());
    let n = batch.len();
    let (r, s, u) = (triple.r(), triple.s(), triple.u());
    let a_r = interpolate_rows(a0, &batch.a1, &vec![r; n])?;
    let a_s = interpolate_rows(a0, &batch.a1, &vec![s; n])?;

    let v_r = field.velocity(rec, &batch.obs, &a_r, &vec![r; n])?;
    let v_s = match cfg.detach {
        DetachPolicy::DetachLarger => {
            let mut scratch = Recording::disabled();
            let v = field.velocity(&mut scratch, &batch.obs, &a_s, &vec![s; n])?;
            rec.detach(&v)
        }
        DetachPolicy::DetachNone => field.velocity(rec, &batch.obs, &a_s, &vec![s; n])?,
    };

    let sim_v = sim_batch(rec, &v_r, &v_s, cfg.mode, h, d, cfg.squared_sim)?;
    let freq_velocity = rec.mean(&sim_v)?;

    let step_r = rec.scale(&v_r, u - r)?;
    let end_r = rec.add(&a_r, &step_r)?;
    let step_s = rec.scale(&v_s, u - s)?;
    let end_s = rec.add(&a_s, &step_s)?;
    let sim_t = sim_batch(rec, &end_r, &end_s, cfg.mode, h, d, cfg.squared_sim)?;
    let freq_trajectory = rec.mean(&sim_t)?;
    Ok((freq_velocity, freq_trajectory))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fm: f64,
    pub freq_velocity: f64,
    pub freq_trajectory: f64,
    pub total: f64,
}

/// `fm + lambda * (freq_velocity + freq_trajectory)`; returns the scalar to
/// differentiate and the value breakdown.
pub fn loss_total(
    rec: &mut Recording,
    field: &impl VelocityField,
    batch: &Batch,
    draw: &NoiseDraw,
    cfg: &LossConfig,
) -> Result<(Tensor, LossBreakdown)> {
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda {} must be >= 0",
            cfg.lambda
        )));
    }
    let fm = loss_fm(rec, field, batch, &draw.a0, &draw.t)?;
    // A zero weight disables the consistency branch entirely.
    if cfg.mode.kind == SimKind::None || cfg.lambda == 0.0 {
        let breakdown = LossBreakdown {
            fm: fm.item(),
            freq_velocity: 0.0,
            freq_trajectory: 0.0,
            total: fm.item(),
        };
        return Ok((fm, breakdown));
    }
    let triple = draw
        .triple
        .ok_or_else(|| Error::invalid("consistency mode needs a time triple"))?;
    let (fv, ft) = loss_freq(rec, field, batch, &draw.a0, triple, cfg)?;
    let pair = rec.add(&fv, &ft)?;
    let weighted = rec.scale(&pair, cfg.lambda)?;
    let total = rec.add(&fm, &weighted)?;
    let breakdown = LossBreakdown {
        fm: fm.item(),
        freq_velocity: fv.item(),
        freq_trajectory: ft.item(),
        total: total.item(),
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interpolation_endpoints() {
        let a0 = ActionChunk::new(2, 1, vec![1.0, -1.0]).unwrap();
        let a1 = ActionChunk::new(2, 1, vec![3.0, 5.0]).unwrap();
        assert_eq!(interpolate(&a0, &a1, 0.0).unwrap(), a0);
        assert_eq!(interpolate(&a0, &a1, 1.0).unwrap(), a1);
        let mid = interpolate(
            &ActionChunk::zeros(2, 1),
            &ActionChunk::new(2, 1, vec![2.0, 2.0]).unwrap(),
            0.5,
        )
        .unwrap();
        assert_eq!(mid.data(), &[1.0, 1.0]);
        assert!(interpolate(&a0, &ActionChunk::zeros(1, 2), 0.5).is_err());
    }

    #[test]
    fn target_cases() {
        let a1 = ActionChunk::new(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert!(fm_target(&a1, &a1)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let neg = ActionChunk::new(2, 2, a1.data().iter().map(|v| -v).collect()).unwrap();
        let t = fm_target(&neg, &a1).unwrap();
        for (x, y) in t.data().iter().zip(a1.data()) {
            assert_eq!(*x, 2.0 * y);
        }
    }

    #[test]
    fn triple_ordering_enforced() {
        assert!(TimeTriple::new(0.2, 0.2, 0.5).is_err());
        assert!(TimeTriple::new(0.5, 0.2, 0.7).is_err());
        assert!(TimeTriple::new(0.0, 0.5, 1.0).is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let t = sample_time_triple(&mut rng);
            assert!(t.r() < t.s() && t.s() < t.u());
        }
    }

    #[test]
    fn triple_is_seeded() {
        let a = sample_time_triple(&mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_time_triple(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn beta_times_lie_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = NoiseDraw::sample(&mut rng, 2000, 1, TimeSampling::Beta, false).unwrap();
        assert!(d.t.iter().all(|t| (0.0..=1.0).contains(t)));
        // Beta(1.5, 1) has mean 0.6.
        let mean = d.t.iter().sum::<f64>() / d.t.len() as f64;
        assert!((mean - 0.6).abs() < 0.02, "{mean}");
    }
}
