//! Forward definitions of every differentiable op.

use super::kernels::{self, ConvGeom, BN_EPS, BN_MOMENTUM};
use super::tape::{Op, RunningStats, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a), data).expect("operands share a shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let v = self.value(a).map(|x| if x >= T::zero() { x } else { x * slope });
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| {
            // Split by sign so exp never overflows.
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a), &[a])
    }

    /// `a (m×n) · b (n×p)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (&[m, n], &[n2, p]) = (self.shape(a), self.shape(b)) else {
            return Err(Error::shape(
                "matmul",
                format!("expected matrices, got {:?} and {:?}", self.shape(a), self.shape(b)),
            ));
        };
        if n != n2 {
            return Err(Error::shape("matmul", format!("inner dims {n} vs {n2}")));
        }
        let data = kernels::gemm_nn(self.value(a).data(), self.value(b).data(), m, n, p);
        let v = Tensor::new(&[m, p], data)?;
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// Affine map `x·wᵀ + b` with `w` stored as `out×in`. `x` is either an
    /// `in` vector or a `batch×in` matrix.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let &[d_out, d_in] = self.shape(w) else {
            return Err(Error::shape("linear", format!("weight must be a matrix, got {:?}", self.shape(w))));
        };
        let (rows, out_shape) = match *self.shape(x) {
            [n] if n == d_in => (1, vec![d_out]),
            [r, n] if n == d_in => (r, vec![r, d_out]),
            _ => {
                return Err(Error::shape(
                    "linear",
                    format!("input {:?} does not end in {d_in}", self.shape(x)),
                ))
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(Error::shape("linear", format!("bias {:?} vs out {d_out}", self.shape(b))));
            }
        }
        let mut data = kernels::gemm_nt(self.value(x).data(), self.value(w).data(), rows, d_in, d_out);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in data.chunks_mut(d_out) {
                row.iter_mut().zip(bias).for_each(|(o, &bv)| *o = *o + bv);
            }
        }
        let v = Tensor::new(&out_shape, data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(v, Op::Linear { x, w, b }, &inputs)
    }

    /// 3×3 convolution, stride 1, zero padding 1. Accepts a `C×H×W` input
    /// or a `N×C×H×W` batch; kernels are `O×C×3×3`, bias `O`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (batch, c_in, h, w, batched) = match *self.shape(x) {
            [c, h, w] => (1, c, h, w, false),
            [n, c, h, w] => (n, c, h, w, true),
            _ => return Err(Error::shape("conv2d", format!("input {:?} is not C×H×W or N×C×H×W", self.shape(x)))),
        };
        let &[c_out, kc, 3, 3] = self.shape(k) else {
            return Err(Error::shape("conv2d", format!("kernels {:?} are not O×C×3×3", self.shape(k))));
        };
        if kc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernels expect {kc} input channels, input has {c_in}"),
            ));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape("conv2d", format!("bias {:?} vs {c_out} filters", self.shape(b))));
        }
        let geom = ConvGeom { batch, c_in, c_out, h, w };
        let data = kernels::conv2d_forward(geom, self.value(x).data(), self.value(k).data(), self.value(b).data());
        let shape = if batched { vec![batch, c_out, h, w] } else { vec![c_out, h, w] };
        let v = Tensor::new(&shape, data)?;
        self.push(v, Op::Conv2d { x, k, b, geom }, &[x, k, b])
    }

    /// Per-channel batch normalisation of an `N×C×H×W` tensor.
    ///
    /// In train mode the batch statistics normalise the input and `stats`
    /// is moved toward them with momentum 0.1 (unbiased variance); in eval
    /// mode `stats` normalises and is left untouched.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        train: bool,
    ) -> Result<Var> {
        let &[batch, channels, h, w] = self.shape(x) else {
            return Err(Error::shape("batchnorm", format!("input {:?} is not N×C×H×W", self.shape(x))));
        };
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] || stats.mean.len() != channels {
            return Err(Error::shape("batchnorm", format!("parameters do not match {channels} channels")));
        }
        if train && batch < 2 {
            return Err(Error::Usage(format!(
                "batchnorm in train mode needs a batch of at least 2, got {batch}"
            )));
        }
        let plane = h * w;
        let xs = self.value(x).data();
        let count = (batch * plane) as f64;
        let eps = T::of(BN_EPS);
        let mut inv_std = vec![T::zero(); channels];
        let mut mean = vec![T::zero(); channels];
        for c in 0..channels {
            let (mu, var) = if train {
                let mut s = T::zero();
                for n in 0..batch {
                    let base = (n * channels + c) * plane;
                    s = s + xs[base..base + plane].iter().copied().sum::<T>();
                }
                let mu = s / T::of(count);
                let mut ss = T::zero();
                for n in 0..batch {
                    let base = (n * channels + c) * plane;
                    for &v in &xs[base..base + plane] {
                        ss = ss + (v - mu) * (v - mu);
                    }
                }
                let var = ss / T::of(count);
                let m = T::of(BN_MOMENTUM);
                let unbiased = ss / T::of(count - 1.0);
                stats.mean[c] = (T::one() - m) * stats.mean[c] + m * mu;
                stats.var[c] = (T::one() - m) * stats.var[c] + m * unbiased;
                (mu, var)
            } else {
                (stats.mean[c], stats.var[c])
            };
            mean[c] = mu;
            inv_std[c] = T::one() / (var + eps).sqrt();
        }
        let (gam, bet) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for n in 0..batch {
            for c in 0..channels {
                let base = (n * channels + c) * plane;
                for k in base..base + plane {
                    xhat[k] = (xs[k] - mean[c]) * inv_std[c];
                    out[k] = gam[c] * xhat[k] + bet[c];
                }
            }
        }
        let v = Tensor::new(self.shape(x), out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
            batch,
            plane,
        };
        self.push(v, op, &[x, gamma, beta])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Concatenates `rows×wᵢ` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Usage("concat of zero tensors".into()));
        };
        let rows = match self.shape(first) {
            &[r, _] => r,
            s => return Err(Error::shape("concat", format!("expected matrices, got {s:?}"))),
        };
        let mut total = 0;
        for &p in parts {
            match *self.shape(p) {
                [r, w] if r == rows => total += w,
                _ => return Err(Error::shape("concat", format!("{:?} does not have {rows} rows", self.shape(p)))),
            }
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let w = self.shape(p)[1];
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let v = Tensor::new(&[rows, total], data)?;
        self.push(v, Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let &[rows, total] = self.shape(x) else {
            return Err(Error::shape("slice_cols", format!("expected a matrix, got {:?}", self.shape(x))));
        };
        if len == 0 || start + len > total {
            return Err(Error::shape("slice_cols", format!("{start}..{} outside {total} columns", start + len)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * total + start..r * total + start + len]);
        }
        let v = Tensor::new(&[rows, len], data)?;
        self.push(v, Op::SliceCols { x, start }, &[x])
    }

    /// Entry `index` along axis 1: `[B, L, ...] -> [B, ...]`.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || index >= shape[1] {
            return Err(Error::shape("select", format!("index {index} on axis 1 of {shape:?}")));
        }
        let (batch, steps) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * inner);
        for n in 0..batch {
            let off = (n * steps + index) * inner;
            data.extend_from_slice(&src[off..off + inner]);
        }
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&shape[2..]);
        let v = Tensor::new(&out_shape, data)?;
        self.push(v, Op::Select { x, index }, &[x])
    }

    /// `m · diag(v)`: scales column `c` of `m` by `v[c]`.
    pub fn scale_cols(&mut self, m: Var, v: Var) -> Result<Var> {
        let &[_, cols] = self.shape(m) else {
            return Err(Error::shape("scale_cols", format!("expected a matrix, got {:?}", self.shape(m))));
        };
        if self.shape(v) != [cols] {
            return Err(Error::shape("scale_cols", format!("vector {:?} vs {cols} columns", self.shape(v))));
        }
        let vv = self.value(v).data();
        let data = self
            .value(m)
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| x * vv[k % cols])
            .collect();
        let out = Tensor::new(self.shape(m), data)?;
        self.push(out, Op::ScaleCols { m, v }, &[m, v])
    }

    /// Rows of a lookup table, one output row per entry of `rows`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let &[n, width] = self.shape(table) else {
            return Err(Error::shape("gather_rows", format!("expected a matrix, got {:?}", self.shape(table))));
        };
        if rows.is_empty() {
            return Err(Error::Usage("gather of zero rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Domain(format!("row {bad} outside table of {n} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let v = Tensor::new(&[rows.len(), width], data)?;
        self.push(v, Op::GatherRows { table, rows: rows.to_vec() }, &[table])
    }

    /// Mean squared difference between `pred` and a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(
                "mse",
                format!("prediction {:?} vs target {:?}", self.shape(pred), target.shape()),
            ));
        }
        let n = T::of(target.len() as f64);
        let s: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let op = Op::Mse {
            pred,
            target: target.data().to_vec(),
        };
        self.push(Tensor::scalar(s / n), op, &[pred])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::of(self.value(a).len() as f64);
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a), &[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn conv_all_ones_counts_in_range_taps() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert_eq!(tape.value(y).to_f64_vec(), vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_zero_kernels_emit_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 4, 5], |i| i as f64 * 0.3 - 2.0));
        let k = tape.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let b = tape.constant(t(&[3], &[0.5, -1.0, 2.0]));
        let y = tape.conv2d(x, k, b).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[3, 4, 5]);
        for o in 0..3 {
            for p in 0..20 {
                assert_eq!(out.data()[o * 20 + p], [0.5, -1.0, 2.0][o]);
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[2, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let err = tape.conv2d(x, k, b).unwrap_err();
        assert!(err.to_string().contains("3 input channels"), "{err}");
    }

    #[test]
    fn matmul_by_hand() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).to_f64_vec(), vec![3.0, 7.0]);

        let id = tape.constant(Tensor::eye(3));
        let m = tape.constant(Tensor::from_fn(&[3, 2], |i| i as f64));
        let r = tape.matmul(id, m).unwrap();
        assert_eq!(tape.value(r), tape.value(m));

        assert!(matches!(tape.matmul(a, m), Err(Error::Shape { .. })));
    }

    #[test]
    fn matmul_gradient_is_row_broadcast_of_column_sums() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 1.5), true);
        let b = tape.constant(Tensor::from_fn(&[3, 4], |i| (i * i) as f64 * 0.1));
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(a).unwrap();
        let bv = tape.value(b).clone();
        for r in 0..2 {
            for k in 0..3 {
                let row_sum: f64 = (0..4).map(|j| bv.at(&[k, j])).sum();
                assert!((g.at(&[r, k]) - row_sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activations_at_reference_points() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).to_f64_vec(), vec![0.0, 0.0, 2.0]);

        let z = tape.constant(t(&[1], &[0.0]));
        let s = tape.sigmoid(z).unwrap();
        let th = tape.tanh(z).unwrap();
        assert_eq!(tape.value(s).data()[0], 0.5);
        assert_eq!(tape.value(th).data()[0], 0.0);

        let l = tape.constant(t(&[2], &[-2.0, 3.0]));
        let lr = tape.leaky_relu(l, 0.01).unwrap();
        assert_eq!(tape.value(lr).to_f64_vec(), vec![-0.02, 3.0]);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[2], &[-500.0, 500.0]).unwrap());
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(s).to_f64_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 1.0]), true);
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn binary_ops_reject_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
        assert!(tape.sub(a, b).is_err());
    }

    #[test]
    fn batchnorm_symmetric_pair() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 1, 1, 1], &[-1.0, 1.0]));
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut stats = RunningStats::new(1);
        let y = tape.batch_norm(x, g, b, &mut stats, true).unwrap();
        let expect = 1.0 / (1.0 + BN_EPS).sqrt();
        let out = tape.value(y).to_f64_vec();
        assert!((out[0] + expect).abs() < 1e-15 && (out[1] - expect).abs() < 1e-15);
        assert_eq!(out[0] + out[1], 0.0);
        // running mean moves toward 0 (already 0), var toward unbiased 2.0
        assert!((stats.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_zero_gamma_emits_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[3, 2, 2, 2], |i| (i as f64).sin()));
        let g = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(t(&[2], &[0.25, -4.0]));
        let mut stats = RunningStats::new(2);
        let y = tape.batch_norm(x, g, b, &mut stats, true).unwrap();
        for (k, v) in tape.value(y).data().iter().enumerate() {
            assert_eq!(*v, if (k / 4) % 2 == 0 { 0.25 } else { -4.0 });
        }
    }

    #[test]
    fn batchnorm_train_rejects_single_sample() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut stats = RunningStats::new(1);
        assert!(matches!(
            tape.batch_norm(x, g, b, &mut stats, true),
            Err(Error::Usage(_))
        ));
        // eval mode is fine with one sample and leaves stats untouched
        let before = stats.clone();
        tape.batch_norm(x, g, b, &mut stats, false).unwrap();
        assert_eq!(stats, before);
    }

    #[test]
    fn reshape_flatten_round_trip() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[32, 8, 16], |i| i as f64), true);
        let flat = tape.reshape(x, &[4096]).unwrap();
        assert_eq!(tape.value(flat).data(), tape.value(x).data());
        let back = tape.reshape(flat, &[32, 8, 16]).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
        assert!(tape.reshape(x, &[4095]).is_err());
        let s = tape.sum(back).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn backward_rules_for_simple_graphs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[4], |i| i as f64), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![1.0; 4]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, -2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![2.0, -4.0]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[3.0]), true);
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![2.0]);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_on_non_scalar_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn mse_by_hand() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::zeros(&[2]), true);
        let loss = tape.mse(p, &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(tape.value(loss).data()[0], 12.5);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap().to_f64_vec(), vec![-3.0, -4.0]);

        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(t(&[2], &[3.0, 4.0]), true);
        let loss = tape.mse(p, &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(tape.value(loss).data()[0], 0.0);
        assert!(tape.mse(p, &t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[1], &[1e30]).unwrap());
        let err = tape.mul(x, x).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "hadamard" }));
    }

    #[test]
    fn select_and_slice_pick_expected_entries() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 2], |i| i as f64));
        let s = tape.select(x, 1).unwrap();
        assert_eq!(tape.value(s).to_f64_vec(), vec![2.0, 3.0, 8.0, 9.0]);
        let m = tape.constant(Tensor::from_fn(&[2, 4], |i| i as f64));
        let c = tape.slice_cols(m, 1, 2).unwrap();
        assert_eq!(tape.value(c).to_f64_vec(), vec![1.0, 2.0, 5.0, 6.0]);
        let cat = tape.concat_cols(&[c, m]).unwrap();
        assert_eq!(tape.shape(cat), &[2, 6]);
        assert_eq!(tape.value(cat).data()[6..8], [5.0, 6.0]);
    }
}
