//! Dense `f64` tensors and a define-by-run reverse-mode tape.
//!
//! A [`Tape`] records every primitive applied during one forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the record in exact reverse order
//! and returns the vector-Jacobian products for every trainable leaf.
//!
//! Broadcasting is deliberately narrow: the second operand of `add`/`mul` may
//! omit the leading (batch) axis of the first, nothing else.

use crate::error::{Error, Result};

/// Log-probabilities are clamped here before exponentiation and after `log`,
/// so probabilities never underflow to exactly zero.
pub const LOG_FLOOR: f64 = -745.0;

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected one element, shape is {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of the trailing dimensions; 1 for scalars and vectors.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Row `i` of a tensor viewed as `rows() x cols()`.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Copy of the rows listed in `indices` (axis 0).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let rows = self.rows();
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= rows {
                return Err(Error::shape(
                    "index_select",
                    format!("index {i} out of range for {rows} rows"),
                ));
            }
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(indices.len());
        } else {
            shape[0] = indices.len();
        }
        Ok(Self { shape, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out = a (m x k) * b (k x n)`.
pub fn matmul_slices(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out = a^T (k x m)^T * g (m x n)` giving `k x n`.
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// `out = g (m x n) * b^T` where `b` is `k x n`, giving `m x k`.
fn matmul_nt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Writes `softmax(logits / tau)` into `out` using max subtraction and the
/// [`LOG_FLOOR`] clamp.
pub fn tempered_softmax_into(logits: &[f64], tau: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let e = ((z - max) / tau).max(LOG_FLOOR).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Probability vector `softmax(logits / tau)`.
pub fn tempered_softmax(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return Err(Error::invalid("tempered_softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tempered_softmax input"));
    }
    let mut out = vec![0.0; logits.len()];
    tempered_softmax_into(logits, tau, &mut out);
    Ok(out)
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Central finite-difference gradient of a scalar function.
pub fn finite_difference_gradient<F>(mut f: F, point: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let mut grad = Tensor::zeros(point.shape().to_vec());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x = point.data[i];
        probe.data[i] = x + h;
        let up = f(&probe)?;
        probe.data[i] = x - h;
        let down = f(&probe)?;
        probe.data[i] = x;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite_difference_gradient"));
        }
        grad.data[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `||a - b|| / max(||a||, ||b||)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    let scale = norm(&a.data).max(norm(&b.data));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Reduction axis for [`Primitive::Mean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    /// Mean of every element; output is a scalar.
    All,
    /// Mean over axis 0; output drops the leading axis.
    Leading,
}

/// The differentiable operations a tape can record.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Matmul,
    Add,
    Mul,
    Scale(f64),
    Exp,
    /// Natural log, clamped below at [`LOG_FLOOR`].
    Log,
    Softplus,
    LeakyRelu(f64),
    Mean(Reduce),
    /// Rows of the input along axis 0.
    IndexSelect(Vec<usize>),
    Reshape(Vec<usize>),
    /// Softmax over the last axis after dividing by the temperature.
    TemperedSoftmax(f64),
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Matmul => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Softplus => "softplus",
            Primitive::LeakyRelu(_) => "leaky_relu",
            Primitive::Mean(_) => "mean",
            Primitive::IndexSelect(_) => "index_select",
            Primitive::Reshape(_) => "reshape",
            Primitive::TemperedSoftmax(_) => "tempered_softmax",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::Matmul | Primitive::Add | Primitive::Mul => 2,
            _ => 1,
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Origin {
    Param,
    Constant,
    Op(Primitive, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    origin: Origin,
    requires_grad: bool,
}

/// Define-by-run record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the trainable leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<bool>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::param`].
    pub fn wrt(&self, var: Var) -> Result<&Tensor> {
        if !self.params.get(var.0).copied().unwrap_or(false) {
            return Err(Error::Detached(var.0));
        }
        self.grads[var.0].as_ref().ok_or(Error::Detached(var.0))
    }
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    a == b || (!a.is_empty() && &a[1..] == b)
}

fn binary_elementwise(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if !broadcast_ok(&a.shape, &b.shape) {
        return Err(Error::shape(
            op,
            format!("{:?} and {:?} (only leading-axis broadcast)", a.shape, b.shape),
        ));
    }
    let bl = b.data.len().max(1);
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, b.data[i % bl]))
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Sums a gradient shaped like `full` down to `target` (leading-axis broadcast).
fn reduce_to(g: Tensor, target: &[usize]) -> Tensor {
    if g.shape == target {
        return g;
    }
    let n: usize = target.iter().product();
    let mut data = vec![0.0; n];
    for (i, v) in g.data.iter().enumerate() {
        data[i % n] += v;
    }
    Tensor {
        shape: target.to_vec(),
        data,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, origin: Origin, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Param, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Constant, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Applies `prim` to `inputs`, records it and returns the output node.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let name = prim.name();
        if inputs.len() != prim.arity() {
            return Err(Error::invalid(format!(
                "{name} takes {} inputs, got {}",
                prim.arity(),
                inputs.len()
            )));
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::invalid(format!("unknown node {}", bad.0)));
        }
        let x = &self.nodes[inputs[0].0].value;
        let out = match &prim {
            Primitive::Matmul => {
                let y = &self.nodes[inputs[1].0].value;
                if x.shape.len() != 2 || y.shape.len() != 2 || x.shape[1] != y.shape[0] {
                    return Err(Error::shape(
                        name,
                        format!("{:?} x {:?}", x.shape, y.shape),
                    ));
                }
                let (m, k, n) = (x.shape[0], x.shape[1], y.shape[1]);
                Tensor {
                    shape: vec![m, n],
                    data: matmul_slices(&x.data, &y.data, m, k, n),
                }
            }
            Primitive::Add => {
                binary_elementwise(x, &self.nodes[inputs[1].0].value, name, |a, b| a + b)?
            }
            Primitive::Mul => {
                binary_elementwise(x, &self.nodes[inputs[1].0].value, name, |a, b| a * b)?
            }
            Primitive::Scale(c) => map(x, |v| v * c),
            Primitive::Exp => map(x, f64::exp),
            Primitive::Log => {
                if x.data.iter().any(|&v| v < 0.0) {
                    return Err(Error::NonFinite(name));
                }
                map(x, |v| v.ln().max(LOG_FLOOR))
            }
            Primitive::Softplus => map(x, softplus),
            Primitive::LeakyRelu(s) => map(x, |v| if v > 0.0 { v } else { s * v }),
            Primitive::Mean(Reduce::All) => {
                if x.data.is_empty() {
                    return Err(Error::shape(name, "mean of an empty tensor"));
                }
                Tensor::scalar(x.data.iter().sum::<f64>() / x.data.len() as f64)
            }
            Primitive::Mean(Reduce::Leading) => {
                if x.shape.is_empty() || x.shape[0] == 0 {
                    return Err(Error::shape(name, format!("leading mean of {:?}", x.shape)));
                }
                let l = x.shape[0];
                let rest: usize = x.shape[1..].iter().product();
                let mut data = vec![0.0; rest];
                for chunk in x.data.chunks(rest.max(1)) {
                    for (d, v) in data.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                for d in &mut data {
                    *d /= l as f64;
                }
                Tensor {
                    shape: x.shape[1..].to_vec(),
                    data,
                }
            }
            Primitive::IndexSelect(idx) => x.select_rows(idx)?,
            Primitive::Reshape(shape) => x.clone().reshape(shape.clone())?,
            Primitive::TemperedSoftmax(tau) => {
                if !(*tau > 0.0) {
                    return Err(Error::invalid(format!(
                        "temperature must be positive, got {tau}"
                    )));
                }
                if x.shape.is_empty() {
                    return Err(Error::shape(name, "softmax of a scalar"));
                }
                let k = *x.shape.last().unwrap();
                let mut data = vec![0.0; x.data.len()];
                for (o, z) in data.chunks_mut(k).zip(x.data.chunks(k)) {
                    tempered_softmax_into(z, *tau, o);
                }
                Tensor {
                    shape: x.shape.clone(),
                    data,
                }
            }
        };
        let out = out.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(out, Origin::Op(prim, inputs.to_vec()), requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Matmul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.apply(Primitive::LeakyRelu(slope), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean(Reduce::All), &[a])
    }

    pub fn mean_leading(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean(Reduce::Leading), &[a])
    }

    pub fn index_select(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::IndexSelect(indices), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Reshape(shape), &[a])
    }

    pub fn tempered_softmax(&mut self, a: Var, tau: f64) -> Result<Var> {
        self.apply(Primitive::TemperedSoftmax(tau), &[a])
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::invalid(format!("unknown node {}", loss.0)))?;
        if node.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, shape is {:?}", node.value.shape),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(node.value.shape.clone(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (prim, inputs) = match &node.origin {
                Origin::Op(p, ins) if node.requires_grad => (p, ins),
                Origin::Param => {
                    grads[i] = Some(g);
                    continue;
                }
                _ => continue,
            };
            let x = &self.nodes[inputs[0].0].value;
            let y = &node.value;
            let contributions: Vec<(Var, Tensor)> = match prim {
                Primitive::Matmul => {
                    let b = &self.nodes[inputs[1].0].value;
                    let (m, k, n) = (x.shape[0], x.shape[1], b.shape[1]);
                    vec![
                        (
                            inputs[0],
                            Tensor {
                                shape: vec![m, k],
                                data: matmul_nt(&g.data, &b.data, m, k, n),
                            },
                        ),
                        (
                            inputs[1],
                            Tensor {
                                shape: vec![k, n],
                                data: matmul_tn(&x.data, &g.data, m, k, n),
                            },
                        ),
                    ]
                }
                Primitive::Add => {
                    let b_shape = self.nodes[inputs[1].0].value.shape.clone();
                    vec![(inputs[0], g.clone()), (inputs[1], reduce_to(g, &b_shape))]
                }
                Primitive::Mul => {
                    let b = &self.nodes[inputs[1].0].value;
                    let bl = b.data.len().max(1);
                    let ga = Tensor {
                        shape: g.shape.clone(),
                        data: g
                            .data
                            .iter()
                            .enumerate()
                            .map(|(j, gv)| gv * b.data[j % bl])
                            .collect(),
                    };
                    let gb_full = Tensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().zip(&x.data).map(|(gv, xv)| gv * xv).collect(),
                    };
                    vec![(inputs[0], ga), (inputs[1], reduce_to(gb_full, &b.shape))]
                }
                Primitive::Scale(c) => vec![(inputs[0], map(&g, |v| v * c))],
                Primitive::Exp => vec![(inputs[0], zip_map(&g, y, |gv, yv| gv * yv))],
                Primitive::Log => vec![(
                    inputs[0],
                    zip_map(&g, x, |gv, xv| {
                        if xv.ln() >= LOG_FLOOR {
                            gv / xv
                        } else {
                            0.0
                        }
                    }),
                )],
                Primitive::Softplus => {
                    vec![(inputs[0], zip_map(&g, x, |gv, xv| gv * sigmoid(xv)))]
                }
                Primitive::LeakyRelu(s) => vec![(
                    inputs[0],
                    zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { gv * s }),
                )],
                Primitive::Mean(Reduce::All) => {
                    let v = g.data[0] / x.data.len() as f64;
                    vec![(inputs[0], Tensor::filled(x.shape.clone(), v))]
                }
                Primitive::Mean(Reduce::Leading) => {
                    let l = x.shape[0] as f64;
                    let rest = g.data.len().max(1);
                    let data = (0..x.data.len()).map(|j| g.data[j % rest] / l).collect();
                    vec![(
                        inputs[0],
                        Tensor {
                            shape: x.shape.clone(),
                            data,
                        },
                    )]
                }
                Primitive::IndexSelect(idx) => {
                    let c = x.cols();
                    let mut gx = Tensor::zeros(x.shape.clone());
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = &mut gx.data[src * c..(src + 1) * c];
                        for (d, v) in dst.iter_mut().zip(&g.data[r * c..(r + 1) * c]) {
                            *d += v;
                        }
                    }
                    vec![(inputs[0], gx)]
                }
                Primitive::Reshape(_) => {
                    let shape = x.shape.clone();
                    vec![(inputs[0], g.reshape(shape)?)]
                }
                Primitive::TemperedSoftmax(tau) => {
                    let k = *y.shape.last().unwrap();
                    let mut data = vec![0.0; y.data.len()];
                    for ((o, yr), gr) in data
                        .chunks_mut(k)
                        .zip(y.data.chunks(k))
                        .zip(g.data.chunks(k))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot) / tau;
                        }
                    }
                    vec![(
                        inputs[0],
                        Tensor {
                            shape: y.shape.clone(),
                            data,
                        },
                    )]
                }
            };
            for (input, contrib) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data.iter_mut().zip(&contrib.data) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let params: Vec<bool> = self
            .nodes
            .iter()
            .map(|n| matches!(n.origin, Origin::Param))
            .collect();
        grads.resize(self.nodes.len(), None);
        for (i, is_param) in params.iter().enumerate() {
            if *is_param && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(self.nodes[i].value.shape.clone()));
            }
        }
        Ok(Gradients { grads, params })
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: g.shape.clone(),
        data: g.data.iter().zip(&x.data).map(|(&a, &b)| f(a, b)).collect(),
    }
}
