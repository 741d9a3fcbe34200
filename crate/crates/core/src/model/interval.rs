use rand::Rng;

use super::Dims;
use crate::error::Result;
use crate::nn::{init_tensor, Forward, Init, Linear, ParamId, ParamStore, Role};
use crate::tensor::{Scalar, Var};

/// Hypernetwork that turns an hour embedding into the weights and biases of
/// the prediction layer.
///
/// The generated `k×d` weight matrix is factorised as `O′·diag(w)·O`, with
/// `w = LeakyReLU(W·V) ∈ ℝᵃ` the only hour-dependent part, so the hour
/// pathway emits `a` numbers instead of `k·d`. Biases are
/// `LeakyReLU(B·V) ∈ ℝᵏ`.
#[derive(Clone, Debug)]
pub struct IntervalNet {
    pub lin_w: Linear,
    pub lin_b: Linear,
    /// `a×d`.
    pub o: ParamId,
    /// `k×a`.
    pub o_prime: ParamId,
    pub rank: usize,
    pub d_in: usize,
    pub outputs: usize,
    pub embed_dim: usize,
}

impl IntervalNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &Dims,
        d_in: usize,
        rng: &mut R,
    ) -> Self {
        let (a, k, h) = (dims.rank, dims.outputs(), dims.embed_dim);
        let lin_w = Linear::new(store, &format!("{name}.lin_w"), h, a, true, rng);
        let lin_b = Linear::new(store, &format!("{name}.lin_b"), h, k, true, rng);
        let o = store.add(
            format!("{name}.o"),
            init_tensor(&[a, d_in], Init::FanInUniform { fan_in: d_in }, rng),
            Role::Trainable,
        );
        let o_prime = store.add(
            format!("{name}.o_prime"),
            init_tensor(&[k, a], Init::FanInUniform { fan_in: a }, rng),
            Role::Trainable,
        );
        Self {
            lin_w,
            lin_b,
            o,
            o_prime,
            rank: a,
            d_in,
            outputs: k,
            embed_dim: h,
        }
    }

    /// Explicit `(W_FC, b_FC)` for a single embedding vector `v ∈ ℝʰ`.
    pub fn generate<T: Scalar>(&self, f: &mut Forward<'_, T>, v: Var, slope: T) -> Result<(Var, Var)> {
        let w = self.lin_w.forward(f, v)?;
        let w = f.tape.leaky_relu(w, slope)?;
        let (o, o_prime) = (f.param(self.o), f.param(self.o_prime));
        let scaled = f.tape.scale_cols(o_prime, w)?;
        let weights = f.tape.matmul(scaled, o)?;
        let b = self.lin_b.forward(f, v)?;
        let b = f.tape.leaky_relu(b, slope)?;
        Ok((weights, b))
    }

    /// Pre-activation `W_FC(vₙ)·βₙ + b_FC(vₙ)` for a batch, evaluated as
    /// `O′·(w ∘ (O·β)) + b` so the `k×d` matrix is never materialised.
    pub fn apply<T: Scalar>(&self, f: &mut Forward<'_, T>, v: Var, features: Var, slope: T) -> Result<Var> {
        let w = self.lin_w.forward(f, v)?;
        let w = f.tape.leaky_relu(w, slope)?;
        let (o, o_prime) = (f.param(self.o), f.param(self.o_prime));
        let projected = f.tape.linear(features, o, None)?;
        let gated = f.tape.mul(w, projected)?;
        let out = f.tape.linear(gated, o_prime, None)?;
        let b = self.lin_b.forward(f, v)?;
        let b = f.tape.leaky_relu(b, slope)?;
        f.tape.add(out, b)
    }
}
