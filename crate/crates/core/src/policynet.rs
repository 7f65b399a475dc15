//! The observation- and time-conditioned velocity field, an MLP over the
//! flattened action chunk.

use std::f64::consts::PI;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunk::ActionChunk;
use crate::diffcore::{Recording, Tensor};
use crate::error::{Error, Result};

/// Anything that can be integrated by the sampler or trained by the losses.
///
/// `obs` is `[B, O]`, `a_t` is `[B, H*D]`, `t` has one time per row. Returns a
/// `[B, H*D]` velocity.
pub trait VelocityField {
    fn horizon(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn velocity(
        &self,
        rec: &mut Recording,
        obs: &Tensor,
        a_t: &Tensor,
        t: &[f64],
    ) -> Result<Tensor>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub depth: usize,
    pub time_embed: usize,
}

impl ModelDims {
    pub const DEFAULT_HIDDEN: usize = 256;
    pub const DEFAULT_DEPTH: usize = 4;
    pub const DEFAULT_TIME_EMBED: usize = 32;

    pub fn new(obs_dim: usize, action_dim: usize, horizon: usize) -> Self {
        ModelDims {
            obs_dim,
            action_dim,
            horizon,
            hidden: Self::DEFAULT_HIDDEN,
            depth: Self::DEFAULT_DEPTH,
            time_embed: Self::DEFAULT_TIME_EMBED,
        }
    }

    pub fn chunk_len(&self) -> usize {
        self.horizon * self.action_dim
    }

    pub fn input_len(&self) -> usize {
        self.chunk_len() + self.obs_dim + self.time_embed
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.obs_dim,
            self.action_dim,
            self.horizon,
            self.hidden,
            self.depth,
            self.time_embed,
        ];
        if all.contains(&0) {
            return Err(Error::invalid(format!(
                "model dims must be positive: {self:?}"
            )));
        }
        if self.time_embed % 2 != 0 {
            return Err(Error::invalid("time embedding size must be even"));
        }
        Ok(())
    }

    /// `(name, fan_in, fan_out)` for every affine layer, input to head.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut layers = Vec::with_capacity(self.depth + 1);
        let mut fan_in = self.input_len();
        for i in 0..self.depth {
            layers.push((format!("hidden.{i}"), fan_in, self.hidden));
            fan_in = self.hidden;
        }
        layers.push(("head".to_string(), fan_in, self.chunk_len()));
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, i, o)| i * o + o).sum()
    }
}

/// Sinusoidal features `[sin(w_1 t), cos(w_1 t), ...]`, `w_j = 2 pi 2^(j-1)`.
pub fn time_embed(t: f64, size: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    if size % 2 != 0 {
        return Err(Error::invalid("time embedding size must be even"));
    }
    let mut out = Vec::with_capacity(size);
    for j in 0..size / 2 {
        let w = 2.0 * PI * (1u64 << j) as f64;
        out.push((w * t).sin());
        out.push((w * t).cos());
    }
    Ok(out)
}

/// Named parameters of the velocity MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    dims: ModelDims,
    params: Vec<(String, Tensor)>,
}

/// Glorot-uniform hidden weights, zero biases, and an all-zero output head.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<VelocityModel> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for (name, fan_in, fan_out) in dims.layers() {
        let weight = if name == "head" {
            vec![0.0; fan_in * fan_out]
        } else {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
            (0..fan_in * fan_out)
                .map(|_| dist.sample(&mut rng))
                .collect()
        };
        params.push((
            format!("{name}.weight"),
            Tensor::matrix(fan_in, fan_out, weight)?,
        ));
        params.push((format!("{name}.bias"), Tensor::zeros(&[fan_out])));
    }
    Ok(VelocityModel { dims, params })
}

impl VelocityModel {
    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_params(dims: ModelDims, named: Vec<(String, Tensor)>) -> Result<Self> {
        dims.validate()?;
        let expected = init_params_shapes(&dims);
        if expected.len() != named.len() {
            return Err(Error::DimMismatch {
                what: "parameter count",
                expected: expected.len(),
                found: named.len(),
            });
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{got_name}` {:?} does not match expected `{name}` {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(VelocityModel {
            dims,
            params: named,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn set_tensors(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::DimMismatch {
                what: "parameter count",
                expected: self.params.len(),
                found: values.len(),
            });
        }
        for ((name, old), new) in self.params.iter_mut().zip(values) {
            if old.shape() != new.shape() {
                return Err(Error::invalid(format!("shape change for `{name}`")));
            }
            *old = new.detach();
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every parameter as a leaf of `rec`.
    pub fn bind(&self, rec: &mut Recording) -> BoundModel {
        BoundModel {
            dims: self.dims,
            params: self.params.iter().map(|(_, t)| rec.leaf(t)).collect(),
        }
    }

    /// Parameters as constants; for inference.
    pub fn frozen(&self) -> BoundModel {
        BoundModel {
            dims: self.dims,
            params: self.tensors(),
        }
    }
}

fn init_params_shapes(dims: &ModelDims) -> Vec<(String, Vec<usize>)> {
    dims.layers()
        .into_iter()
        .flat_map(|(name, i, o)| {
            [
                (format!("{name}.weight"), vec![i, o]),
                (format!("{name}.bias"), vec![o]),
            ]
        })
        .collect()
}

/// A model whose parameters live in (or are constants of) a particular recording.
#[derive(Clone, Debug)]
pub struct BoundModel {
    dims: ModelDims,
    params: Vec<Tensor>,
}

impl BoundModel {
    /// Wraps tensors that are already leaves (e.g. inside a gradient check).
    pub fn from_tensors(dims: ModelDims, params: Vec<Tensor>) -> Self {
        BoundModel { dims, params }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }
}

impl VelocityField for BoundModel {
    fn horizon(&self) -> usize {
        self.dims.horizon
    }

    fn action_dim(&self) -> usize {
        self.dims.action_dim
    }

    fn velocity(
        &self,
        rec: &mut Recording,
        obs: &Tensor,
        a_t: &Tensor,
        t: &[f64],
    ) -> Result<Tensor> {
        let d = &self.dims;
        let batch = t.len();
        if obs.shape() != [batch, d.obs_dim] || a_t.shape() != [batch, d.chunk_len()] {
            return Err(Error::Shape {
                op: "forward_velocity",
                shapes: vec![obs.shape().to_vec(), a_t.shape().to_vec(), vec![batch]],
            });
        }
        let mut temb = Vec::with_capacity(batch * d.time_embed);
        for &ti in t {
            temb.extend(time_embed(ti, d.time_embed)?);
        }
        let temb = Tensor::matrix(batch, d.time_embed, temb)?;
        let mut h = rec.concat_last(&[a_t, obs, &temb])?;
        for layer in 0..d.depth {
            let z = rec.affine(&h, &self.params[2 * layer], &self.params[2 * layer + 1])?;
            h = rec.silu(&z)?;
        }
        rec.affine(&h, &self.params[2 * d.depth], &self.params[2 * d.depth + 1])
    }
}

/// Velocity for a single observation and chunk.
pub fn forward_velocity(
    model: &VelocityModel,
    obs: &[f64],
    a_t: &ActionChunk,
    t: f64,
) -> Result<ActionChunk> {
    let d = model.dims();
    if obs.len() != d.obs_dim {
        return Err(Error::DimMismatch {
            what: "observation",
            expected: d.obs_dim,
            found: obs.len(),
        });
    }
    if a_t.horizon() != d.horizon || a_t.dims() != d.action_dim {
        return Err(Error::Shape {
            op: "forward_velocity",
            shapes: vec![
                vec![a_t.horizon(), a_t.dims()],
                vec![d.horizon, d.action_dim],
            ],
        });
    }
    let mut rec = Recording::disabled();
    let obs = Tensor::matrix(1, obs.len(), obs.to_vec())?;
    let v = model
        .frozen()
        .velocity(&mut rec, &obs, &a_t.to_row_tensor(), &[t])?;
    ActionChunk::new(d.horizon, d.action_dim, v.to_vec())
}
