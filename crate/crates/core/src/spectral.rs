//! Type-II DCT of action chunks and the frequency-domain similarity measures
//! used by the consistency objective.
//!
//! Coefficients are unnormalized: `F(v)_k = sum_n v(n) cos(pi/H (n + 1/2) k)`.
//! Chunks are transformed column by column, one length-`H` signal per action
//! dimension.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::chunk::ActionChunk;
use crate::diffcore::{Recording, Tensor};
use crate::error::{Error, Result};

/// `H x H` DCT-II matrix, entry `(k, n) = cos(pi/H (n + 1/2) k)`.
pub fn dct_matrix(h: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(h * h);
    for k in 0..h {
        for n in 0..h {
            m.push((PI / h as f64 * (n as f64 + 0.5) * k as f64).cos());
        }
    }
    m
}

pub fn dct2(signal: &[f64]) -> Result<Vec<f64>> {
    let h = signal.len();
    if h == 0 {
        return Err(Error::invalid("dct2 of an empty signal"));
    }
    let m = dct_matrix(h);
    Ok(m.chunks_exact(h)
        .map(|row| row.iter().zip(signal).map(|(c, x)| c * x).sum())
        .collect())
}

/// Inverse of [`dct2`] (type-III with `1/H`, `2/H` scaling).
pub fn idct2(coeffs: &[f64]) -> Result<Vec<f64>> {
    let h = coeffs.len();
    if h == 0 {
        return Err(Error::invalid("idct2 of an empty signal"));
    }
    let m = dct_matrix(h);
    let scale = 1.0 / h as f64;
    Ok((0..h)
        .map(|n| {
            let tail: f64 = (1..h).map(|k| coeffs[k] * m[k * h + n]).sum();
            scale * (coeffs[0] + 2.0 * tail)
        })
        .collect())
}

/// DCT-II coefficients of every column of a chunk; entry `(k, d)` is the
/// `k`-th coefficient of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCoeffs(ActionChunk);

impl SpectralCoeffs {
    pub fn horizon(&self) -> usize {
        self.0.horizon()
    }

    pub fn dims(&self) -> usize {
        self.0.dims()
    }

    pub fn get(&self, k: usize, d: usize) -> f64 {
        self.0.get(k, d)
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_chunk(&self) -> &ActionChunk {
        &self.0
    }

    /// `||F_k - G_k||_2` over action dimensions, for each `k`.
    pub fn band_distances(&self, other: &SpectralCoeffs) -> Result<Vec<f64>> {
        if !self.0.same_shape(&other.0) {
            return Err(Error::Shape {
                op: "band_distances",
                shapes: vec![
                    vec![self.horizon(), self.dims()],
                    vec![other.horizon(), other.dims()],
                ],
            });
        }
        Ok((0..self.horizon())
            .map(|k| {
                self.0
                    .row(k)
                    .iter()
                    .zip(other.0.row(k))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }
}

pub fn dct2_chunk(v: &ActionChunk) -> Result<SpectralCoeffs> {
    let columns = (0..v.dims())
        .map(|d| dct2(&v.column(d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralCoeffs(ActionChunk::from_columns(&columns)?))
}

pub fn idct2_chunk(c: &SpectralCoeffs) -> Result<ActionChunk> {
    let columns = (0..c.dims())
        .map(|d| idct2(&c.0.column(d)))
        .collect::<Result<Vec<_>>>()?;
    ActionChunk::from_columns(&columns)
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Softmax over frequency index of the per-band coefficient distance.
pub fn adaptive_weights(fr: &SpectralCoeffs, fs: &SpectralCoeffs) -> Result<Vec<f64>> {
    Ok(softmax(&fr.band_distances(fs)?))
}

/// Which similarity the consistency objective uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    None,
    Spatial,
    FreqLow,
    FreqHigh,
    FreqFull,
    FreqAdaptive,
}

impl SimKind {
    pub const ALL: [SimKind; 6] = [
        SimKind::None,
        SimKind::Spatial,
        SimKind::FreqLow,
        SimKind::FreqHigh,
        SimKind::FreqFull,
        SimKind::FreqAdaptive,
    ];

    pub fn is_banded(self) -> bool {
        matches!(self, SimKind::FreqLow | SimKind::FreqHigh)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimKind::None => "none",
            SimKind::Spatial => "spatial",
            SimKind::FreqLow => "freq_low",
            SimKind::FreqHigh => "freq_high",
            SimKind::FreqFull => "freq_full",
            SimKind::FreqAdaptive => "freq_adaptive",
        }
    }
}

impl std::str::FromStr for SimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SimKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown similarity mode `{s}`")))
    }
}

/// A similarity mode plus the band cutoff `k*` used by the low/high variants;
/// coefficients with `k < k*` form the low band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimMode {
    pub kind: SimKind,
    pub band_split: usize,
}

impl SimMode {
    pub fn new(kind: SimKind, band_split: usize) -> Self {
        SimMode { kind, band_split }
    }

    /// Uses `k* = ceil(H/4)`.
    pub fn with_default_split(kind: SimKind, horizon: usize) -> Self {
        SimMode::new(kind, default_band_split(horizon))
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.kind.is_banded() && (self.band_split < 1 || self.band_split + 1 > horizon) {
            return Err(Error::invalid(format!(
                "band cutoff {} outside [1, {}] for {}",
                self.band_split,
                horizon.saturating_sub(1),
                self.kind.as_str()
            )));
        }
        Ok(())
    }
}

pub fn default_band_split(horizon: usize) -> usize {
    horizon.div_ceil(4)
}

/// `[H*D, H*D]` operator mapping a flattened chunk row vector to its flattened
/// coefficients (`coeffs = v * op`), keeping only bands `k` in `keep`.
fn chunk_operator(h: usize, d: usize, keep: std::ops::Range<usize>) -> Tensor {
    let c = dct_matrix(h);
    let hd = h * d;
    let mut op = vec![0.0; hd * hd];
    for n in 0..h {
        for k in keep.clone() {
            let v = c[k * h + n];
            for dim in 0..d {
                op[(n * d + dim) * hd + k * d + dim] = v;
            }
        }
    }
    Tensor::matrix(hd, hd, op).expect("square operator")
}

/// Differentiable batched DCT: `[B, H*D]` velocities to `[B, H*D]` coefficients.
pub fn dct2_batch(rec: &mut Recording, v: &Tensor, h: usize, d: usize) -> Result<Tensor> {
    rec.matmul(v, &chunk_operator(h, d, 0..h))
}

/// Per-sample similarity of two `[B, H*D]` velocity batches; returns `[B]`.
///
/// With `squared` the norms are squared (for adaptive mode, each per-band
/// distance is squared while the weights still come from unsquared distances).
pub fn sim_batch(
    rec: &mut Recording,
    vr: &Tensor,
    vs: &Tensor,
    mode: SimMode,
    h: usize,
    d: usize,
    squared: bool,
) -> Result<Tensor> {
    if vr.shape() != vs.shape() || vr.rank() != 2 || vr.shape()[1] != h * d {
        return Err(Error::Shape {
            op: "sim",
            shapes: vec![vr.shape().to_vec(), vs.shape().to_vec(), vec![h, d]],
        });
    }
    mode.validate(h)?;
    let batch = vr.shape()[0];
    let finish = |rec: &mut Recording, n: Tensor| {
        if squared {
            rec.square(&n)
        } else {
            Ok(n)
        }
    };
    match mode.kind {
        SimKind::None => Ok(Tensor::zeros(&[batch])),
        SimKind::Spatial => {
            let diff = rec.sub(vr, vs)?;
            let n = rec.norm_axis(&diff, 1)?;
            finish(rec, n)
        }
        SimKind::FreqFull | SimKind::FreqLow | SimKind::FreqHigh => {
            let keep = match mode.kind {
                SimKind::FreqLow => 0..mode.band_split,
                SimKind::FreqHigh => mode.band_split..h,
                _ => 0..h,
            };
            let diff = rec.sub(vr, vs)?;
            let coeffs = rec.matmul(&diff, &chunk_operator(h, d, keep))?;
            let n = rec.norm_axis(&coeffs, 1)?;
            finish(rec, n)
        }
        SimKind::FreqAdaptive => {
            let diff = rec.sub(vr, vs)?;
            let coeffs = dct2_batch(rec, &diff, h, d)?;
            let bands = rec.reshape(&coeffs, &[batch, h, d])?;
            let band_norms = rec.norm_axis(&bands, 2)?;
            let frozen = rec.detach(&band_norms);
            let weights = rec.softmax_axis(&frozen, 1)?.detach();
            let terms = if squared {
                rec.square(&band_norms)?
            } else {
                band_norms
            };
            let weighted = rec.mul(&terms, &weights)?;
            rec.sum_axis(&weighted, 1)
        }
    }
}

/// Similarity of two single velocity chunks.
pub fn sim(vr: &ActionChunk, vs: &ActionChunk, mode: SimMode) -> Result<f64> {
    if !vr.same_shape(vs) {
        return Err(Error::Shape {
            op: "sim",
            shapes: vec![vec![vr.horizon(), vr.dims()], vec![vs.horizon(), vs.dims()]],
        });
    }
    let mut rec = Recording::disabled();
    let out = sim_batch(
        &mut rec,
        &vr.to_row_tensor(),
        &vs.to_row_tensor(),
        mode,
        vr.horizon(),
        vr.dims(),
        false,
    )?;
    Ok(out.data()[0])
}
