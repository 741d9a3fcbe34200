use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_tensor, Forward, Init, ParamId, ParamStore, Role};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Affine layer `y = W·x + b`, weight stored `out×in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_tensor(&[d_out, d_in], Init::FanInUniform { fan_in: d_in }, rng),
            Role::Trainable,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]), Role::Trainable));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.tape.linear(x, w, b)
    }
}

/// 3×3 same-padding convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv3x3 {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let kernels = store.add(
            format!("{name}.kernels"),
            init_tensor(&[c_out, c_in, 3, 3], Init::HeNormal { fan_in: c_in * 9 }, rng),
            Role::Trainable,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), Role::Trainable);
        Self {
            kernels,
            bias,
            c_in,
            c_out,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let k = f.param(self.kernels);
        let b = f.param(self.bias);
        f.tape.conv2d(x, k, b)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels]), Role::Trainable),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), Role::Trainable),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), Role::Buffer),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[channels]), Role::Buffer),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        f.batch_norm(x, self)
    }
}

/// Where the skip connection of a residual unit starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualForm {
    /// `X₁ = BN(conv₁ X₀)`, `X₂ = BN(conv₂ X₁)`, `out = ReLU(X₁ + X₂)`.
    #[default]
    FirstConvTap,
    /// Conventional identity skip: `out = ReLU(X₀ + BN(conv₂ ReLU(BN(conv₁ X₀))))`.
    IdentitySkip,
}

/// Two batch-normalised convolutions joined by a residual sum.
#[derive(Clone, Debug)]
pub struct ResUnit {
    pub conv1: Conv3x3,
    pub bn1: BatchNorm,
    pub conv2: Conv3x3,
    pub bn2: BatchNorm,
    pub form: ResidualForm,
}

impl ResUnit {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        form: ResidualForm,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv3x3::new(store, &format!("{name}.conv1"), channels, channels, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), channels),
            conv2: Conv3x3::new(store, &format!("{name}.conv2"), channels, channels, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), channels),
            form,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.c_in
    }

    /// `x0` is `N×C×H×W`; output has the same shape.
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x0: Var) -> Result<Var> {
        let shape = f.tape.shape(x0);
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::shape(
                "res_unit",
                format!("input {shape:?} does not carry {} channels", self.channels()),
            ));
        }
        let c1 = self.conv1.forward(f, x0)?;
        let x1 = self.bn1.forward(f, c1)?;
        match self.form {
            ResidualForm::FirstConvTap => {
                let c2 = self.conv2.forward(f, x1)?;
                let x2 = self.bn2.forward(f, c2)?;
                let s = f.tape.add(x1, x2)?;
                f.tape.relu(s)
            }
            ResidualForm::IdentitySkip => {
                let a1 = f.tape.relu(x1)?;
                let c2 = self.conv2.forward(f, a1)?;
                let x2 = self.bn2.forward(f, c2)?;
                let s = f.tape.add(x0, x2)?;
                f.tape.relu(s)
            }
        }
    }
}

/// Entry convolution (2 → c channels, ReLU, no BN) followed by residual units.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub entry: Conv3x3,
    pub units: Vec<ResUnit>,
}

impl ConvBlock {
    pub const INPUT_CHANNELS: usize = 2;
    pub const RES_UNITS: usize = 2;

    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        form: ResidualForm,
        rng: &mut R,
    ) -> Self {
        let entry = Conv3x3::new(store, &format!("{name}.entry"), Self::INPUT_CHANNELS, channels, rng);
        let units = (0..Self::RES_UNITS)
            .map(|u| ResUnit::new(store, &format!("{name}.res{u}"), channels, form, rng))
            .collect();
        Self { entry, units }
    }

    pub fn channels(&self) -> usize {
        self.entry.c_out
    }

    /// `m` is `N×2×H×W`; returns `N×c×H×W`.
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, m: Var) -> Result<Var> {
        let shape = f.tape.shape(m);
        if shape.len() != 4 || shape[1] != Self::INPUT_CHANNELS {
            return Err(Error::shape(
                "conv_block",
                format!("input {shape:?} is not N×2×H×W"),
            ));
        }
        let e = self.entry.forward(f, m)?;
        let mut x = f.tape.relu(e)?;
        for unit in &self.units {
            x = unit.forward(f, x)?;
        }
        Ok(x)
    }
}

/// Single-layer LSTM. Gate blocks are stacked `[i; f; g; o]` along the
/// output axis of both weight matrices.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub b_ih: ParamId,
    pub w_hh: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        // Uniform ±1/√hidden, the usual LSTM convention; biases (forget gate included) start at 0.
        let init = Init::FanInUniform { fan_in: hidden };
        Self {
            w_ih: store.add(format!("{name}.w_ih"), init_tensor(&[4 * hidden, input], init, rng), Role::Trainable),
            b_ih: store.add(format!("{name}.b_ih"), Tensor::zeros(&[4 * hidden]), Role::Trainable),
            w_hh: store.add(format!("{name}.w_hh"), init_tensor(&[4 * hidden, hidden], init, rng), Role::Trainable),
            b_hh: store.add(format!("{name}.b_hh"), Tensor::zeros(&[4 * hidden]), Role::Trainable),
            input,
            hidden,
        }
    }

    /// One step on `batch×input` / `batch×hidden` operands; returns `(h, c)`.
    pub fn step<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let d = self.hidden;
        let (xs, hs, cs) = (f.tape.shape(x), f.tape.shape(h), f.tape.shape(c));
        let ok = xs.len() == 2
            && xs[1] == self.input
            && hs == [xs[0], d]
            && cs == [xs[0], d];
        if !ok {
            return Err(Error::shape(
                "lstm_step",
                format!("x {xs:?}, h {hs:?}, c {cs:?} for input {} hidden {d}", self.input),
            ));
        }
        let (w_ih, b_ih, w_hh, b_hh) = (
            f.param(self.w_ih),
            f.param(self.b_ih),
            f.param(self.w_hh),
            f.param(self.b_hh),
        );
        let gx = f.tape.linear(x, w_ih, Some(b_ih))?;
        let gh = f.tape.linear(h, w_hh, Some(b_hh))?;
        let gates = f.tape.add(gx, gh)?;
        let pre_i = f.tape.slice_cols(gates, 0, d)?;
        let pre_f = f.tape.slice_cols(gates, d, d)?;
        let pre_g = f.tape.slice_cols(gates, 2 * d, d)?;
        let pre_o = f.tape.slice_cols(gates, 3 * d, d)?;
        let i = f.tape.sigmoid(pre_i)?;
        let fg = f.tape.sigmoid(pre_f)?;
        let g = f.tape.tanh(pre_g)?;
        let o = f.tape.sigmoid(pre_o)?;
        let keep = f.tape.mul(fg, c)?;
        let write = f.tape.mul(i, g)?;
        let c_next = f.tape.add(keep, write)?;
        let squashed = f.tape.tanh(c_next)?;
        let h_next = f.tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Runs the sequence from zero state and returns the last hidden state.
    pub fn sequence<T: Scalar>(&self, f: &mut Forward<'_, T>, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Usage("lstm over an empty sequence".into()));
        };
        let batch = f.tape.shape(first)[0];
        let mut h = f.tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let mut c = f.tape.constant(Tensor::zeros(&[batch, self.hidden]));
        for &x in xs {
            (h, c) = self.step(f, x, h, c)?;
        }
        Ok(h)
    }
}
