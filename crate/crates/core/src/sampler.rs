//! Euler integration of a velocity field from noise (`t = 0`) to actions (`t = 1`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chunk::{unstack_chunks, ActionChunk};
use crate::diffcore::{Recording, Tensor};
use crate::error::{Error, Result};
use crate::policynet::VelocityField;

/// States visited by one integration, `n_steps + 1` of them on a uniform grid,
/// plus the velocity evaluated at each of the first `n_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub states: Vec<(f64, ActionChunk)>,
    pub velocities: Vec<ActionChunk>,
    pub n_steps: usize,
}

impl SampleTrace {
    pub fn initial(&self) -> &ActionChunk {
        &self.states[0].1
    }

    pub fn last(&self) -> &ActionChunk {
        &self.states[self.n_steps].1
    }
}

/// `[B, len]` standard-normal noise from a single seeded stream.
pub fn draw_noise(seed: u64, batch: usize, len: usize) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..batch * len)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::matrix(batch, len, data)
}

/// Batched Euler integration; returns the final states, and when `trace` is
/// set, every intermediate state and velocity.
pub fn integrate(
    field: &impl VelocityField,
    obs: &Tensor,
    a0: &Tensor,
    n_steps: usize,
    mut trace: Option<&mut Vec<(Tensor, Tensor)>>,
) -> Result<Tensor> {
    if n_steps < 1 {
        return Err(Error::invalid("n_steps must be at least 1"));
    }
    let batch = a0.shape()[0];
    let dt = 1.0 / n_steps as f64;
    let mut rec = Recording::disabled();
    let mut a = a0.detach();
    for i in 0..n_steps {
        let t = i as f64 / n_steps as f64;
        let v = field.velocity(&mut rec, obs, &a, &vec![t; batch])?;
        let next: Vec<f64> = a
            .data()
            .iter()
            .zip(v.data())
            .map(|(x, dv)| x + dt * dv)
            .collect();
        let next = Tensor::matrix(batch, a.shape()[1], next)?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push((a.clone(), v));
        }
        a = next;
    }
    Ok(a)
}

/// Integrates from `a0 ~ N(0, I)` drawn with `seed`.
pub fn euler_sample(
    field: &impl VelocityField,
    obs: &[f64],
    n_steps: usize,
    seed: u64,
) -> Result<SampleTrace> {
    if n_steps < 1 {
        return Err(Error::invalid("n_steps must be at least 1"));
    }
    let (h, d) = (field.horizon(), field.action_dim());
    let a0 = draw_noise(seed, 1, h * d)?;
    let obs = Tensor::matrix(1, obs.len(), obs.to_vec())?;
    let mut steps = Vec::with_capacity(n_steps);
    let last = integrate(field, &obs, &a0, n_steps, Some(&mut steps))?;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut velocities = Vec::with_capacity(n_steps);
    for (i, (a, v)) in steps.into_iter().enumerate() {
        states.push((
            i as f64 / n_steps as f64,
            ActionChunk::new(h, d, a.to_vec())?,
        ));
        velocities.push(ActionChunk::new(h, d, v.to_vec())?);
    }
    states.push((1.0, ActionChunk::new(h, d, last.to_vec())?));
    Ok(SampleTrace {
        states,
        velocities,
        n_steps,
    })
}

/// Single Euler step from `t = 0`; identical to `euler_sample(.., 1, ..)`'s end state.
pub fn one_step(field: &impl VelocityField, obs: &[f64], seed: u64) -> Result<ActionChunk> {
    Ok(euler_sample(field, obs, 1, seed)?.last().clone())
}

/// Samples `samples_per_obs` chunks for each observation row; noise for the
/// whole set comes from one stream seeded by `seed`. Output order is
/// observation-major.
pub fn sample_chunks(
    field: &impl VelocityField,
    observations: &[Vec<f64>],
    samples_per_obs: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<ActionChunk>> {
    let (h, d) = (field.horizon(), field.action_dim());
    let Some(first) = observations.first() else {
        return Ok(Vec::new());
    };
    let obs_dim = first.len();
    let batch = observations.len() * samples_per_obs;
    if batch == 0 {
        return Ok(Vec::new());
    }
    let mut obs = Vec::with_capacity(batch * obs_dim);
    for o in observations {
        if o.len() != obs_dim {
            return Err(Error::DimMismatch {
                what: "observation",
                expected: obs_dim,
                found: o.len(),
            });
        }
        for _ in 0..samples_per_obs {
            obs.extend_from_slice(o);
        }
    }
    let obs = Tensor::matrix(batch, obs_dim, obs)?;
    let a0 = draw_noise(seed, batch, h * d)?;
    let out = integrate(field, &obs, &a0, n_steps, None)?;
    unstack_chunks(&out, h, d)
}

/// Mean over steps of the distance between each step's velocity and the chord
/// from start to end, relative to the chord length.
pub fn straightness(trace: &SampleTrace) -> f64 {
    let n = trace.velocities.len();
    if n == 0 {
        return 0.0;
    }
    // The chord equals the mean velocity for Euler steps on a uniform grid.
    let len = trace.velocities[0].data().len();
    let mut chord = vec![0.0; len];
    for v in &trace.velocities {
        chord.iter_mut().zip(v.data()).for_each(|(c, x)| *c += x);
    }
    chord.iter_mut().for_each(|c| *c /= n as f64);
    let chord_len = chord.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-8);
    let total: f64 = trace
        .velocities
        .iter()
        .map(|v| {
            v.data()
                .iter()
                .zip(&chord)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / n as f64 / chord_len
}
