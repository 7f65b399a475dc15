use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// An `H x D` block of actions, horizon-major (row `h` holds the `D` action
/// dimensions at step `h`).
#[derive(Clone, Debug, PartialEq)]
pub struct ActionChunk {
    horizon: usize,
    dims: usize,
    data: Vec<f64>,
}

impl ActionChunk {
    pub fn new(horizon: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if horizon == 0 || dims == 0 {
            return Err(Error::invalid("chunk needs H >= 1 and D >= 1"));
        }
        if data.len() != horizon * dims {
            return Err(Error::DimMismatch {
                what: "chunk elements",
                expected: horizon * dims,
                found: data.len(),
            });
        }
        Ok(ActionChunk {
            horizon,
            dims,
            data,
        })
    }

    pub fn zeros(horizon: usize, dims: usize) -> Self {
        ActionChunk {
            horizon,
            dims,
            data: vec![0.0; horizon * dims],
        }
    }

    /// Builds a chunk from per-dimension columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let dims = columns.len();
        let horizon = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != horizon) {
            return Err(Error::invalid("columns differ in length"));
        }
        let mut data = Vec::with_capacity(horizon * dims);
        for h in 0..horizon {
            data.extend(columns.iter().map(|c| c[h]));
        }
        Self::new(horizon, dims, data)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, h: usize, d: usize) -> f64 {
        self.data[h * self.dims + d]
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.data[h * self.dims..(h + 1) * self.dims]
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.horizon).map(|h| self.get(h, d)).collect()
    }

    pub fn same_shape(&self, other: &ActionChunk) -> bool {
        self.horizon == other.horizon && self.dims == other.dims
    }

    /// Flattened `[1, H*D]` tensor.
    pub fn to_row_tensor(&self) -> Tensor {
        Tensor::matrix(1, self.data.len(), self.data.clone()).expect("non-empty chunk")
    }

    pub fn l2_distance(&self, other: &ActionChunk) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Stacks equally-shaped chunks into a `[B, H*D]` tensor.
pub fn stack_chunks(chunks: &[ActionChunk]) -> Result<Tensor> {
    let first = chunks
        .first()
        .ok_or_else(|| Error::invalid("cannot stack an empty chunk list"))?;
    let mut data = Vec::with_capacity(chunks.len() * first.data.len());
    for c in chunks {
        if !c.same_shape(first) {
            return Err(Error::invalid("chunks differ in shape"));
        }
        data.extend_from_slice(&c.data);
    }
    Tensor::matrix(chunks.len(), first.data.len(), data)
}

/// Splits a `[B, H*D]` tensor back into chunks.
pub fn unstack_chunks(t: &Tensor, horizon: usize, dims: usize) -> Result<Vec<ActionChunk>> {
    if t.rank() != 2 || t.shape()[1] != horizon * dims {
        return Err(Error::Shape {
            op: "unstack_chunks",
            shapes: vec![t.shape().to_vec(), vec![horizon * dims]],
        });
    }
    t.data()
        .chunks_exact(horizon * dims)
        .map(|row| ActionChunk::new(horizon, dims, row.to_vec()))
        .collect()
}
