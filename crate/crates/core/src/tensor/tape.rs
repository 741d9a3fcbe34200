use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Discriminant of a recorded op, used in diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    MatMul,
    Linear,
    Conv2d,
    BatchNorm,
    Reshape,
    Concat,
    SliceCols,
    Select,
    ScaleCols,
    GatherRows,
    Mse,
    Sum,
    Mean,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "hadamard",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::MatMul => "matmul",
            OpKind::Linear => "linear",
            OpKind::Conv2d => "conv2d",
            OpKind::BatchNorm => "batchnorm",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
            OpKind::SliceCols => "slice_cols",
            OpKind::Select => "select",
            OpKind::ScaleCols => "scale_cols",
            OpKind::GatherRows => "gather_rows",
            OpKind::Mse => "mse",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        const ALL: [OpKind; 22] = [
            OpKind::Leaf,
            OpKind::Add,
            OpKind::Sub,
            OpKind::Mul,
            OpKind::Scale,
            OpKind::Relu,
            OpKind::LeakyRelu,
            OpKind::Sigmoid,
            OpKind::Tanh,
            OpKind::MatMul,
            OpKind::Linear,
            OpKind::Conv2d,
            OpKind::BatchNorm,
            OpKind::Reshape,
            OpKind::Concat,
            OpKind::SliceCols,
            OpKind::Select,
            OpKind::ScaleCols,
            OpKind::GatherRows,
            OpKind::Mse,
            OpKind::Sum,
            OpKind::Mean,
        ];
        ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Batch-norm running statistics, updated in place by train-mode passes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
        batch: usize,
        plane: usize,
    },
    Reshape(Var),
    Concat(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Select {
        x: Var,
        index: usize,
    },
    ScaleCols {
        m: Var,
        v: Var,
    },
    GatherRows {
        table: Var,
        rows: Vec<usize>,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(..) => OpKind::Relu,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Linear { .. } => OpKind::Linear,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Concat(..) => OpKind::Concat,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::Select { .. } => OpKind::Select,
            Op::ScaleCols { .. } => OpKind::ScaleCols,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::Mse { .. } => OpKind::Mse,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
        }
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Ordered record of one forward pass.
///
/// Nodes are appended as ops run, so inputs always precede their consumers.
/// A tape supports exactly one [`backward`](Tape::backward) call.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupts the backward rule of one op kind (gradients scaled by 1.5).
    /// Exists so verification tooling can prove it catches broken rules.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root w.r.t. `v`, if one reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v), g.clone()).expect("gradient shape matches value"))
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let kind = op.kind();
        if !value.is_finite() && inputs.iter().all(|v| self.nodes[v.0].value.is_finite()) {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Back-propagates from a scalar root, filling gradients for every
    /// node that requires them. Gradients from multiple consumers are summed.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage("backward already ran on this tape".into()));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if self.fault == Some(node.op.kind()) {
                let s = T::of(1.5);
                g.iter_mut().for_each(|v| *v = *v * s);
            }
            if node.requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn val(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.iter().map(|&v| -v).collect());
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let d = g.iter().zip(self.val(b)).map(|(&g, &y)| g * y).collect();
                    self.accumulate(grads, a, d);
                }
                if self.wants(b) {
                    let d = g.iter().zip(self.val(a)).map(|(&g, &x)| g * x).collect();
                    self.accumulate(grads, b, d);
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.iter().map(|&v| v * s).collect()),
            &Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(self.val(a))
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, a, d);
            }
            &Op::LeakyRelu(a, slope) => {
                let d = g
                    .iter()
                    .zip(self.val(a))
                    .map(|(&g, &x)| if x > T::zero() { g } else { g * slope })
                    .collect();
                self.accumulate(grads, a, d);
            }
            &Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, a, d);
            }
            &Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, a, d);
            }
            &Op::MatMul(a, b) => {
                let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                let p = self.shape(b)[1];
                if self.wants(a) {
                    self.accumulate(grads, a, kernels::gemm_nt(g, self.val(b), m, p, n));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, kernels::gemm_tn(self.val(a), g, m, n, p));
                }
            }
            &Op::Linear { x, w, b } => {
                let (d_out, d_in) = (self.shape(w)[0], self.shape(w)[1]);
                let rows = self.val(x).len() / d_in;
                if self.wants(x) {
                    self.accumulate(grads, x, kernels::gemm_nn(g, self.val(w), rows, d_out, d_in));
                }
                if self.wants(w) {
                    self.accumulate(grads, w, kernels::gemm_tn(g, self.val(x), rows, d_out, d_in));
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); d_out];
                    for row in g.chunks(d_out) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Conv2d { x, k, b, geom } => {
                let (dx, dk, db) = kernels::conv2d_backward(geom, self.val(x), self.val(k), g);
                self.accumulate(grads, x, dx);
                self.accumulate(grads, k, dk);
                self.accumulate(grads, b, db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                batch,
                plane,
            } => {
                let (batch, plane) = (*batch, *plane);
                let channels = inv_std.len();
                let gam = self.val(*gamma);
                let m = T::of((batch * plane) as f64);
                let mut dgamma = vec![T::zero(); channels];
                let mut dbeta = vec![T::zero(); channels];
                let mut sum_dxhat = vec![T::zero(); channels];
                let mut sum_dxhat_xhat = vec![T::zero(); channels];
                for n in 0..batch {
                    for c in 0..channels {
                        let base = (n * channels + c) * plane;
                        for k in base..base + plane {
                            dgamma[c] = dgamma[c] + g[k] * xhat[k];
                            dbeta[c] = dbeta[c] + g[k];
                            let dxh = g[k] * gam[c];
                            sum_dxhat[c] = sum_dxhat[c] + dxh;
                            sum_dxhat_xhat[c] = sum_dxhat_xhat[c] + dxh * xhat[k];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * plane;
                            for k in base..base + plane {
                                let dxh = g[k] * gam[c];
                                dx[k] = if *train {
                                    inv_std[c] / m
                                        * (m * dxh - sum_dxhat[c] - xhat[k] * sum_dxhat_xhat[c])
                                } else {
                                    dxh * inv_std[c]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            &Op::Reshape(a) => self.accumulate(grads, a, g.to_vec()),
            Op::Concat(parts) => {
                let rows = self.shape(Var(i))[0];
                let total = self.shape(Var(i))[1];
                let mut offset = 0;
                for &p in parts {
                    let width = self.shape(p)[1];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(rows * width);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + width]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += width;
                }
            }
            &Op::SliceCols { x, start } => {
                let (rows, total) = (self.shape(x)[0], self.shape(x)[1]);
                let width = self.shape(Var(i))[1];
                let mut d = vec![T::zero(); rows * total];
                for r in 0..rows {
                    d[r * total + start..r * total + start + width]
                        .copy_from_slice(&g[r * width..(r + 1) * width]);
                }
                self.accumulate(grads, x, d);
            }
            &Op::Select { x, index } => {
                let shape = self.shape(x);
                let (batch, steps) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let mut d = vec![T::zero(); batch * steps * inner];
                for n in 0..batch {
                    let dst = (n * steps + index) * inner;
                    d[dst..dst + inner].copy_from_slice(&g[n * inner..(n + 1) * inner]);
                }
                self.accumulate(grads, x, d);
            }
            &Op::ScaleCols { m, v } => {
                let cols = self.shape(m)[1];
                if self.wants(m) {
                    let vv = self.val(v);
                    let d = g.iter().enumerate().map(|(k, &g)| g * vv[k % cols]).collect();
                    self.accumulate(grads, m, d);
                }
                if self.wants(v) {
                    let mut d = vec![T::zero(); cols];
                    for (k, (&g, &mv)) in g.iter().zip(self.val(m)).enumerate() {
                        d[k % cols] = d[k % cols] + g * mv;
                    }
                    self.accumulate(grads, v, d);
                }
            }
            Op::GatherRows { table, rows } => {
                let shape = self.shape(*table);
                let width = shape[1];
                let mut d = vec![T::zero(); shape[0] * width];
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut d[r * width..(r + 1) * width];
                    dst.iter_mut()
                        .zip(&g[k * width..(k + 1) * width])
                        .for_each(|(a, &b)| *a = *a + b);
                }
                self.accumulate(grads, *table, d);
            }
            Op::Mse { pred, target } => {
                let scale = g[0] * T::of(2.0 / target.len() as f64);
                let d = self
                    .val(*pred)
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| (p - t) * scale)
                    .collect();
                self.accumulate(grads, *pred, d);
            }
            &Op::Sum(a) => {
                let n = self.val(a).len();
                self.accumulate(grads, a, vec![g[0]; n]);
            }
            &Op::Mean(a) => {
                let n = self.val(a).len();
                self.accumulate(grads, a, vec![g[0] / T::of(n as f64); n]);
            }
        }
    }
}
