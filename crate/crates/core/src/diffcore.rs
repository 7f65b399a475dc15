//! Dense `f64` tensors and a define-by-run recording for reverse-mode
//! differentiation.
//!
//! A [`Recording`] is an append-only list of primitive applications. Every
//! tensor produced while at least one input is attached carries the id of its
//! node; [`Recording::backward`] walks the list in reverse and accumulates
//! adjoints. Tensors without a node id are constants.
//!
//! Detached values can be frozen across evaluations (see [`grad_check`]) so
//! that finite differences see the same constants the analytic pass saw.

use std::sync::Arc;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Row-major dense tensor. Scalars have an empty shape.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self::from_parts(shape, data))
    }

    fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Value-identical copy severed from any recording.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }
}

impl PartialEq for Tensor {
    /// Value equality; recording membership is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

/// Primitive operations known to the recording, each with a hand-written adjoint.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// `[m,k] x [k,n]`.
    MatMul,
    /// `x W + b` with `x: [m,k]`, `W: [k,n]`, `b: [n]`.
    Affine,
    Tanh,
    Silu,
    ConcatLast,
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    /// Sum over one axis, or over everything to a scalar when `axis` is `None`.
    Sum {
        axis: Option<usize>,
    },
    Mean {
        axis: Option<usize>,
    },
    Square,
    Sqrt,
    Exp,
    /// Euclidean norm over one axis.
    Norm {
        axis: usize,
    },
    Softmax {
        axis: usize,
    },
    Reshape(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Leaf => "leaf",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::MatMul => "matmul",
            Primitive::Affine => "affine",
            Primitive::Tanh => "tanh",
            Primitive::Silu => "silu",
            Primitive::ConcatLast => "concat_last",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Square => "square",
            Primitive::Sqrt => "sqrt",
            Primitive::Exp => "exp",
            Primitive::Norm { .. } => "norm",
            Primitive::Softmax { .. } => "softmax",
            Primitive::Reshape(_) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Primitive,
    inputs: Vec<Tensor>,
    value: Tensor,
}

#[derive(Debug, Default)]
enum DetachMode {
    #[default]
    Plain,
    Capture(Vec<Tensor>),
    Replay {
        values: Vec<Tensor>,
        next: usize,
    },
}

/// Append-only record of primitive applications for one forward pass.
#[derive(Debug)]
pub struct Recording {
    nodes: Vec<Node>,
    enabled: bool,
    detach_mode: DetachMode,
}

impl Default for Recording {
    fn default() -> Self {
        Self::new()
    }
}

impl Recording {
    pub fn new() -> Self {
        Recording {
            nodes: Vec::new(),
            enabled: true,
            detach_mode: DetachMode::Plain,
        }
    }

    /// A recording that never stores nodes; every result is a constant.
    pub fn disabled() -> Self {
        Recording {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Start remembering every value passed through [`Recording::detach`].
    pub fn capture_detached(&mut self) {
        self.detach_mode = DetachMode::Capture(Vec::new());
    }

    pub fn take_detached(&mut self) -> Vec<Tensor> {
        match std::mem::take(&mut self.detach_mode) {
            DetachMode::Capture(v) => v,
            _ => Vec::new(),
        }
    }

    /// Replace detached values, in call order, by previously captured ones.
    pub fn replay_detached(&mut self, values: Vec<Tensor>) {
        self.detach_mode = DetachMode::Replay { values, next: 0 };
    }

    /// Register a differentiable input.
    pub fn leaf(&mut self, value: &Tensor) -> Tensor {
        let value = value.detach();
        if !self.enabled {
            return value;
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Primitive::Leaf,
            inputs: Vec::new(),
            value: value.clone(),
        });
        value.with_node(id)
    }

    /// Cut `x` out of the recording. Under replay the frozen value is returned
    /// instead of `x`'s current value.
    pub fn detach(&mut self, x: &Tensor) -> Tensor {
        match &mut self.detach_mode {
            DetachMode::Plain => x.detach(),
            DetachMode::Capture(values) => {
                values.push(x.detach());
                x.detach()
            }
            DetachMode::Replay { values, next } => {
                let v = values.get(*next).cloned().unwrap_or_else(|| x.detach());
                *next += 1;
                v
            }
        }
    }

    pub fn apply(&mut self, op: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        for t in inputs {
            if !t.is_finite() {
                return Err(Error::NonFinite { op: op.name() });
            }
        }
        let value = forward(&op, inputs)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        if !self.enabled || inputs.iter().all(|t| t.node.is_none()) {
            return Ok(value);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            value: value.clone(),
        });
        Ok(value.with_node(id))
    }

    /// Recompute every recorded node from its recorded inputs, in order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            if node.op == Primitive::Leaf {
                values.push(node.value.clone());
                continue;
            }
            let inputs: Vec<Tensor> = node
                .inputs
                .iter()
                .map(|t| match t.node {
                    Some(id) => values[id].clone(),
                    None => t.clone(),
                })
                .collect();
            let refs: Vec<&Tensor> = inputs.iter().collect();
            values.push(forward(&node.op, &refs)?);
        }
        Ok(values)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        if root.numel() != 1 {
            return Err(Error::NonScalarRoot(root.shape.clone()));
        }
        let root_id = match root.node {
            Some(id) if id < self.nodes.len() => id,
            _ => return Err(Error::DetachedRoot),
        };
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root_id + 1];
        grads[root_id] = Some(vec![1.0]);
        for id in (0..=root_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.op != Primitive::Leaf {
                let needs: Vec<bool> = node.inputs.iter().map(|t| t.node.is_some()).collect();
                let input_grads = adjoint(&node.op, &node.inputs, &node.value, &g, &needs);
                for (input, ig) in node.inputs.iter().zip(input_grads) {
                    if let (Some(in_id), Some(ig)) = (input.node, ig) {
                        match &mut grads[in_id] {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            slot => *slot = Some(ig),
                        }
                    }
                }
            }
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.map(|g| Tensor::from_parts(self.nodes[id].value.shape.clone(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: &Tensor, k: f64) -> Result<Tensor> {
        self.apply(Primitive::Scale(k), &[a])
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn affine(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Affine, &[x, w, b])
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Tanh, &[x])
    }

    pub fn silu(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Silu, &[x])
    }

    pub fn concat_last(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        self.apply(Primitive::ConcatLast, parts)
    }

    pub fn slice(&mut self, x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        self.apply(Primitive::Slice { axis, start, end }, &[x])
    }

    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Sum { axis: None }, &[x])
    }

    pub fn sum_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.apply(Primitive::Sum { axis: Some(axis) }, &[x])
    }

    pub fn mean(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Mean { axis: None }, &[x])
    }

    pub fn mean_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.apply(Primitive::Mean { axis: Some(axis) }, &[x])
    }

    pub fn square(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Square, &[x])
    }

    pub fn sqrt(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Sqrt, &[x])
    }

    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Exp, &[x])
    }

    pub fn norm_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.apply(Primitive::Norm { axis }, &[x])
    }

    pub fn softmax_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.apply(Primitive::Softmax { axis }, &[x])
    }

    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[x])
    }
}

/// Adjoints produced by [`Recording::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `t`, if `t` is an antecedent.
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        t.node
            .and_then(|id| self.grads.get(id))
            .and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but zero-filled for tensors the root does not depend on.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn by_node(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

fn shape_err(op: &Primitive, inputs: &[&Tensor]) -> Error {
    Error::Shape {
        op: op.name(),
        shapes: inputs.iter().map(|t| t.shape.clone()).collect(),
    }
}

/// `(outer, len, inner)` split of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn removed_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = a * b` for row-major `a: [m,k]`, `b: [k,n]`, with optional transposes
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
) {
    // a is stored as [m,k] (or [k,m] when transposed); likewise b.
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the strides
    // address only those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn forward(op: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let unary = |f: &dyn Fn(f64) -> f64| -> Result<Tensor> {
        if inputs.len() != 1 {
            return Err(shape_err(op, inputs));
        }
        let x = inputs[0];
        Ok(Tensor::from_parts(
            x.shape.clone(),
            x.data.iter().map(|&v| f(v)).collect(),
        ))
    };
    let binary = |f: &dyn Fn(f64, f64) -> f64| -> Result<Tensor> {
        if inputs.len() != 2 || inputs[0].shape != inputs[1].shape {
            return Err(shape_err(op, inputs));
        }
        let (a, b) = (inputs[0], inputs[1]);
        Ok(Tensor::from_parts(
            a.shape.clone(),
            a.data
                .iter()
                .zip(b.data.iter())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        ))
    };
    match op {
        Primitive::Leaf => Err(Error::invalid(
            "leaf nodes are created with Recording::leaf",
        )),
        Primitive::Add => binary(&|x, y| x + y),
        Primitive::Sub => binary(&|x, y| x - y),
        Primitive::Mul => binary(&|x, y| x * y),
        Primitive::Scale(k) => {
            let k = *k;
            if !k.is_finite() {
                return Err(Error::NonFinite { op: op.name() });
            }
            unary(&|x| k * x)
        }
        Primitive::Tanh => unary(&f64::tanh),
        Primitive::Silu => unary(&|x| x * sigmoid(x)),
        Primitive::Square => unary(&|x| x * x),
        Primitive::Exp => unary(&f64::exp),
        Primitive::Sqrt => {
            if inputs.len() == 1 && inputs[0].data.iter().any(|&v| v < 0.0) {
                return Err(Error::invalid("sqrt of a negative value"));
            }
            unary(&f64::sqrt)
        }
        Primitive::MatMul => {
            let [a, b] = inputs else {
                return Err(shape_err(op, inputs));
            };
            if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
                return Err(shape_err(op, inputs));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, &a.data, false, &b.data, false, &mut out);
            Ok(Tensor::from_parts(vec![m, n], out))
        }
        Primitive::Affine => {
            let [x, w, b] = inputs else {
                return Err(shape_err(op, inputs));
            };
            if x.rank() != 2
                || w.rank() != 2
                || b.rank() != 1
                || x.shape[1] != w.shape[0]
                || w.shape[1] != b.shape[0]
            {
                return Err(shape_err(op, inputs));
            }
            let (m, k, n) = (x.shape[0], x.shape[1], w.shape[1]);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, &x.data, false, &w.data, false, &mut out);
            for row in out.chunks_exact_mut(n) {
                row.iter_mut()
                    .zip(b.data.iter())
                    .for_each(|(o, bb)| *o += bb);
            }
            Ok(Tensor::from_parts(vec![m, n], out))
        }
        Primitive::ConcatLast => {
            let Some(first) = inputs.first() else {
                return Err(shape_err(op, inputs));
            };
            if first.rank() == 0 {
                return Err(shape_err(op, inputs));
            }
            let lead = &first.shape[..first.rank() - 1];
            if inputs
                .iter()
                .any(|t| t.rank() != first.rank() || &t.shape[..t.rank() - 1] != lead)
            {
                return Err(shape_err(op, inputs));
            }
            let rows: usize = lead.iter().product();
            let widths: Vec<usize> = inputs.iter().map(|t| *t.shape.last().unwrap()).collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (t, &w) in inputs.iter().zip(&widths) {
                    out.extend_from_slice(&t.data[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Ok(Tensor::from_parts(shape, out))
        }
        Primitive::Slice { axis, start, end } => {
            let [x] = inputs else {
                return Err(shape_err(op, inputs));
            };
            if *axis >= x.rank() || start >= end || *end > x.shape[*axis] {
                return Err(shape_err(op, inputs));
            }
            let (outer, len, inner) = split_axis(&x.shape, *axis);
            let width = end - start;
            let mut out = Vec::with_capacity(outer * width * inner);
            for o in 0..outer {
                let base = o * len * inner;
                out.extend_from_slice(&x.data[base + start * inner..base + end * inner]);
            }
            let mut shape = x.shape.clone();
            shape[*axis] = width;
            Ok(Tensor::from_parts(shape, out))
        }
        Primitive::Sum { axis } | Primitive::Mean { axis } => {
            let [x] = inputs else {
                return Err(shape_err(op, inputs));
            };
            let mean = matches!(op, Primitive::Mean { .. });
            match axis {
                None => {
                    let s: f64 = x.data.iter().sum();
                    let v = if mean { s / x.numel() as f64 } else { s };
                    Ok(Tensor::scalar(v))
                }
                Some(axis) => {
                    if *axis >= x.rank() {
                        return Err(shape_err(op, inputs));
                    }
                    let (outer, len, inner) = split_axis(&x.shape, *axis);
                    let mut out = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for i in 0..len {
                            let src = &x.data[(o * len + i) * inner..(o * len + i + 1) * inner];
                            out[o * inner..(o + 1) * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    if mean {
                        out.iter_mut().for_each(|v| *v /= len as f64);
                    }
                    Ok(Tensor::from_parts(removed_axis(&x.shape, *axis), out))
                }
            }
        }
        Primitive::Norm { axis } => {
            let [x] = inputs else {
                return Err(shape_err(op, inputs));
            };
            if *axis >= x.rank() {
                return Err(shape_err(op, inputs));
            }
            let (outer, len, inner) = split_axis(&x.shape, *axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..inner {
                    let mut s = 0.0;
                    for i in 0..len {
                        let v = x.data[(o * len + i) * inner + j];
                        s += v * v;
                    }
                    out[o * inner + j] = s.sqrt();
                }
            }
            Ok(Tensor::from_parts(removed_axis(&x.shape, *axis), out))
        }
        Primitive::Softmax { axis } => {
            let [x] = inputs else {
                return Err(shape_err(op, inputs));
            };
            if *axis >= x.rank() {
                return Err(shape_err(op, inputs));
            }
            let (outer, len, inner) = split_axis(&x.shape, *axis);
            let mut out = vec![0.0; x.numel()];
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |i: usize| (o * len + i) * inner + j;
                    let max = (0..len)
                        .map(|i| x.data[idx(i)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for i in 0..len {
                        let e = (x.data[idx(i)] - max).exp();
                        out[idx(i)] = e;
                        z += e;
                    }
                    for i in 0..len {
                        out[idx(i)] /= z;
                    }
                }
            }
            Ok(Tensor::from_parts(x.shape.clone(), out))
        }
        Primitive::Reshape(shape) => {
            let [x] = inputs else {
                return Err(shape_err(op, inputs));
            };
            if shape.iter().product::<usize>() != x.numel() || shape.iter().any(|&e| e == 0) {
                return Err(shape_err(op, inputs));
            }
            Ok(Tensor {
                shape: shape.clone(),
                data: Arc::clone(&x.data),
                node: None,
            })
        }
    }
}

/// Input adjoints for one node given the output adjoint `g`. Entries for inputs
/// with `needs[i] == false` are left as `None`.
fn adjoint(
    op: &Primitive,
    inputs: &[Tensor],
    out: &Tensor,
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let mut res: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
    let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..g.len()).map(f).collect() };
    match op {
        Primitive::Leaf => {}
        Primitive::Add => {
            for (i, r) in res.iter_mut().enumerate() {
                if needs[i] {
                    *r = Some(g.to_vec());
                }
            }
        }
        Primitive::Sub => {
            if needs[0] {
                res[0] = Some(g.to_vec());
            }
            if needs[1] {
                res[1] = Some(g.iter().map(|v| -v).collect());
            }
        }
        Primitive::Mul => {
            let (a, b) = (&inputs[0].data, &inputs[1].data);
            if needs[0] {
                res[0] = Some(elementwise(&|i| g[i] * b[i]));
            }
            if needs[1] {
                res[1] = Some(elementwise(&|i| g[i] * a[i]));
            }
        }
        Primitive::Scale(k) => res[0] = Some(g.iter().map(|v| v * k).collect()),
        Primitive::Tanh => {
            let y = &out.data;
            res[0] = Some(elementwise(&|i| g[i] * (1.0 - y[i] * y[i])));
        }
        Primitive::Silu => {
            let x = &inputs[0].data;
            res[0] = Some(elementwise(&|i| {
                let s = sigmoid(x[i]);
                g[i] * s * (1.0 + x[i] * (1.0 - s))
            }));
        }
        Primitive::Square => {
            let x = &inputs[0].data;
            res[0] = Some(elementwise(&|i| 2.0 * x[i] * g[i]));
        }
        Primitive::Sqrt => {
            let y = &out.data;
            res[0] = Some(elementwise(&|i| {
                if y[i] > 0.0 {
                    g[i] / (2.0 * y[i])
                } else {
                    0.0
                }
            }));
        }
        Primitive::Exp => {
            let y = &out.data;
            res[0] = Some(elementwise(&|i| g[i] * y[i]));
        }
        Primitive::MatMul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            if needs[0] {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, &b.data, true, &mut ga);
                res[0] = Some(ga);
            }
            if needs[1] {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, &a.data, true, g, false, &mut gb);
                res[1] = Some(gb);
            }
        }
        Primitive::Affine => {
            let (x, w) = (&inputs[0], &inputs[1]);
            let (m, k, n) = (x.shape[0], x.shape[1], w.shape[1]);
            if needs[0] {
                let mut gx = vec![0.0; m * k];
                gemm(m, n, k, g, false, &w.data, true, &mut gx);
                res[0] = Some(gx);
            }
            if needs[1] {
                let mut gw = vec![0.0; k * n];
                gemm(k, m, n, &x.data, true, g, false, &mut gw);
                res[1] = Some(gw);
            }
            if needs[2] {
                let mut gb = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                res[2] = Some(gb);
            }
        }
        Primitive::ConcatLast => {
            let widths: Vec<usize> = inputs.iter().map(|t| *t.shape.last().unwrap()).collect();
            let total: usize = widths.iter().sum();
            let rows = g.len() / total;
            let mut offset = 0;
            for (i, &w) in widths.iter().enumerate() {
                if needs[i] {
                    let mut gi = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gi.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    res[i] = Some(gi);
                }
                offset += w;
            }
        }
        Primitive::Slice { axis, start, end } => {
            let x = &inputs[0];
            let (outer, len, inner) = split_axis(&x.shape, *axis);
            let width = end - start;
            let mut gx = vec![0.0; x.numel()];
            for o in 0..outer {
                let dst = o * len * inner + start * inner;
                let src = o * width * inner;
                gx[dst..dst + width * inner].copy_from_slice(&g[src..src + width * inner]);
            }
            res[0] = Some(gx);
        }
        Primitive::Sum { axis } | Primitive::Mean { axis } => {
            let x = &inputs[0];
            let mean = matches!(op, Primitive::Mean { .. });
            match axis {
                None => {
                    let v = if mean { g[0] / x.numel() as f64 } else { g[0] };
                    res[0] = Some(vec![v; x.numel()]);
                }
                Some(axis) => {
                    let (outer, len, inner) = split_axis(&x.shape, *axis);
                    let div = if mean { len as f64 } else { 1.0 };
                    let mut gx = vec![0.0; x.numel()];
                    for o in 0..outer {
                        for i in 0..len {
                            for j in 0..inner {
                                gx[(o * len + i) * inner + j] = g[o * inner + j] / div;
                            }
                        }
                    }
                    res[0] = Some(gx);
                }
            }
        }
        Primitive::Norm { axis } => {
            let x = &inputs[0];
            let (outer, len, inner) = split_axis(&x.shape, *axis);
            let mut gx = vec![0.0; x.numel()];
            for o in 0..outer {
                for j in 0..inner {
                    let n = out.data[o * inner + j];
                    // Subgradient zero at the origin.
                    if n > 0.0 {
                        let s = g[o * inner + j] / n;
                        for i in 0..len {
                            let idx = (o * len + i) * inner + j;
                            gx[idx] = s * x.data[idx];
                        }
                    }
                }
            }
            res[0] = Some(gx);
        }
        Primitive::Softmax { axis } => {
            let (outer, len, inner) = split_axis(&out.shape, *axis);
            let y = &out.data;
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |i: usize| (o * len + i) * inner + j;
                    let dot: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                    for i in 0..len {
                        gx[idx(i)] = y[idx(i)] * (g[idx(i)] - dot);
                    }
                }
            }
            res[0] = Some(gx);
        }
        Primitive::Reshape(_) => res[0] = Some(g.to_vec()),
    }
    res
}

/// Maximum relative discrepancy between analytic gradients and central
/// differences, `|a - c| / max(|a|, |c|, 1e-8)`, over every element of every
/// input. Values passed through [`Recording::detach`] are held fixed at their
/// unperturbed values during differencing.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Recording, &[Tensor]) -> Result<Tensor>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let mut rec = Recording::new();
    rec.capture_detached();
    let leaves: Vec<Tensor> = inputs.iter().map(|x| rec.leaf(x)).collect();
    let y = f(&mut rec, &leaves)?;
    if y.numel() != 1 {
        return Err(Error::NonScalarRoot(y.shape.clone()));
    }
    let frozen = rec.take_detached();
    let analytic: Vec<Tensor> = if y.is_attached() {
        let grads = rec.backward(&y)?;
        leaves.iter().map(|l| grads.wrt(l)).collect()
    } else {
        leaves.iter().map(|l| Tensor::zeros(l.shape())).collect()
    };

    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut r = Recording::disabled();
        r.replay_detached(frozen.clone());
        Ok(f(&mut r, vals)?.item())
    };

    let mut worst = 0.0f64;
    let mut current: Vec<Tensor> = inputs.iter().map(|t| t.detach()).collect();
    for (which, analytic) in analytic.iter().enumerate() {
        for idx in 0..inputs[which].numel() {
            let base = inputs[which].data[idx];
            let mut perturbed = inputs[which].to_vec();
            perturbed[idx] = base + step;
            current[which] = Tensor::from_parts(inputs[which].shape.clone(), perturbed.clone());
            let plus = eval(&current)?;
            perturbed[idx] = base - step;
            current[which] = Tensor::from_parts(inputs[which].shape.clone(), perturbed);
            let minus = eval(&current)?;
            current[which] = inputs[which].detach();
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Recording, &Tensor) -> Result<Tensor>,
{
    grad_check_many(|rec, xs| f(rec, &xs[0]), std::slice::from_ref(x), step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_elementwise() {
        let mut rec = Recording::new();
        let y = rec
            .add(&t(&[2], &[1.0, 2.0]), &t(&[2], &[3.0, 4.0]))
            .unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut rec = Recording::new();
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = t(&[3, 2], &[1., -2., 3.5, 4., 0.25, 6.]);
        assert_eq!(rec.matmul(&eye, &x).unwrap(), x);
    }

    #[test]
    fn softmax_uniform() {
        let mut rec = Recording::new();
        let y = rec.softmax_axis(&Tensor::zeros(&[4]), 0).unwrap();
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn shape_mismatch_names_primitive() {
        let mut rec = Recording::new();
        let err = rec
            .add(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]))
            .unwrap_err();
        match err {
            Error::Shape { op, shapes } => {
                assert_eq!(op, "add");
                assert_eq!(shapes, vec![vec![2], vec![3]]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut rec = Recording::new();
        let bad = t(&[2], &[1.0, f64::NAN]);
        assert!(matches!(
            rec.tanh(&bad),
            Err(Error::NonFinite { op: "tanh" })
        ));
    }

    #[test]
    fn square_gradient() {
        let mut rec = Recording::new();
        let x = rec.leaf(&Tensor::scalar(3.0));
        let y = rec.square(&x).unwrap();
        let g = rec.backward(&y).unwrap();
        assert_eq!(g.get(&x).unwrap().item(), 6.0);
        assert_eq!(g.get(&y).unwrap().item(), 1.0);
    }

    #[test]
    fn mean_softmax_has_zero_gradient() {
        let mut rec = Recording::new();
        let x = rec.leaf(&t(&[4], &[0.3, -1.0, 2.0, 0.5]));
        let s = rec.softmax_axis(&x, 0).unwrap();
        let m = rec.mean(&s).unwrap();
        let g = rec.backward(&m).unwrap();
        for v in g.get(&x).unwrap().data() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut rec = Recording::new();
        let x = rec.leaf(&t(&[2], &[1.0, 2.0]));
        let y = rec.square(&x).unwrap();
        assert!(matches!(rec.backward(&y), Err(Error::NonScalarRoot(_))));
        let s = rec.sum(&y).unwrap();
        assert!(matches!(
            rec.backward(&s.detach()),
            Err(Error::DetachedRoot)
        ));
    }

    #[test]
    fn detach_severs_gradient() {
        let mut rec = Recording::new();
        let x = rec.leaf(&t(&[3], &[1.0, -2.0, 0.5]));
        let d = rec.detach(&x);
        assert_eq!(d.data(), x.data());
        let y = rec.square(&d).unwrap();
        let z = rec.add(&y, &x).unwrap();
        let s = rec.sum(&z).unwrap();
        let g = rec.backward(&s).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn product_with_detached_self() {
        // d/dx sum(x * c) with c frozen at x is x.
        let x = t(&[4], &[0.5, -1.5, 2.0, 3.0]);
        let mut rec = Recording::new();
        let xl = rec.leaf(&x);
        let c = rec.detach(&xl);
        let p = rec.mul(&xl, &c).unwrap();
        let s = rec.sum(&p).unwrap();
        let g = rec.backward(&s).unwrap();
        assert_eq!(g.get(&xl).unwrap().data(), x.data());

        let err = grad_check(
            |rec, x| {
                let c = rec.detach(x);
                let p = rec.mul(x, &c)?;
                rec.sum(&p)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn grad_check_detached_constant_is_zero() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        let err = grad_check(
            |rec, x| {
                let d = rec.detach(x);
                rec.sum(&d)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_rejects_non_scalar() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        assert!(matches!(
            grad_check(|rec, x| rec.square(x), &x, 1e-5),
            Err(Error::NonScalarRoot(_))
        ));
    }

    #[test]
    fn replay_reproduces_forward() {
        let mut rec = Recording::new();
        let x = rec.leaf(&t(&[2, 3], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]));
        let w = rec.leaf(&t(&[3, 2], &[1.0, -1.0, 0.5, 0.25, -0.75, 2.0]));
        let b = rec.leaf(&t(&[2], &[0.1, -0.2]));
        let h = rec.affine(&x, &w, &b).unwrap();
        let h = rec.silu(&h).unwrap();
        let n = rec.norm_axis(&h, 1).unwrap();
        let y = rec.mean(&n).unwrap();
        let replayed = rec.replay().unwrap();
        assert_eq!(replayed.last().unwrap().data(), y.data());
    }

    #[test]
    fn norm_at_origin_has_zero_subgradient() {
        let mut rec = Recording::new();
        let x = rec.leaf(&Tensor::zeros(&[2, 3]));
        let n = rec.norm_axis(&x, 1).unwrap();
        let s = rec.sum(&n).unwrap();
        let g = rec.backward(&s).unwrap();
        assert!(g.get(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disabled_recording_stores_nothing() {
        let mut rec = Recording::disabled();
        let x = rec.leaf(&Tensor::scalar(2.0));
        let y = rec.square(&x).unwrap();
        assert!(!y.is_attached());
        assert!(rec.is_empty());
    }
}
