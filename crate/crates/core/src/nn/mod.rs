//! Parameter storage, forward-pass context, and the layers of the network.

mod layers;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{RunningStats, Scalar, Tape, Tensor, Var};

pub use layers::{BatchNorm, Conv3x3, ConvBlock, Linear, Lstm, ResUnit, ResidualForm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// How the optimiser treats a stored tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Trainable,
    /// Enters the graph but never receives updates (e.g. pre-built embeddings).
    Frozen,
    /// Non-differentiable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub role: Role,
}

/// Flat, ordered collection of every tensor a model owns.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, role: Role) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            role,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of scalar values with the given role.
    pub fn count(&self, role: Role) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role == role)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn set_role(&mut self, id: ParamId, role: Role) {
        self.entries[id.0].role = role;
    }

    /// Overwrites every tensor from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Usage("parameter stores have different layouts".into()));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn same_layout<U: Scalar>(&self, other: &ParamStore<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape() && a.role == b.role)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    role: e.role,
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

/// Whether batch-norm uses batch statistics (and updates its running ones).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// N(0, 2/fan_in).
    HeNormal { fan_in: usize },
    /// U(−1/√fan_in, 1/√fan_in).
    FanInUniform { fan_in: usize },
    Zeros,
    Ones,
}

pub fn init_tensor<T: Scalar, R: Rng + ?Sized>(shape: &[usize], init: Init, rng: &mut R) -> Tensor<T> {
    match init {
        Init::HeNormal { fan_in } => {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
        }
        Init::FanInUniform { fan_in } => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
        }
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::ones(shape),
    }
}

/// One forward pass in progress: a fresh tape plus lazily bound parameters.
pub struct Forward<'s, T: Scalar> {
    pub tape: Tape<T>,
    store: &'s mut ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
}

impl<'s, T: Scalar> Forward<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        let n = store.len();
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; n],
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Tape handle for a stored tensor; trainable tensors require gradients.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let v = self
            .tape
            .leaf(entry.value.clone(), entry.role == Role::Trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn batch_norm(&mut self, x: Var, bn: &BatchNorm) -> Result<Var> {
        let gamma = self.param(bn.gamma);
        let beta = self.param(bn.beta);
        let mut stats = RunningStats {
            mean: self.store.get(bn.running_mean).data().to_vec(),
            var: self.store.get(bn.running_var).data().to_vec(),
        };
        let train = self.mode == Mode::Train;
        let y = self.tape.batch_norm(x, gamma, beta, &mut stats, train)?;
        if train {
            self.store.get_mut(bn.running_mean).data_mut().copy_from_slice(&stats.mean);
            self.store.get_mut(bn.running_var).data_mut().copy_from_slice(&stats.var);
        }
        Ok(y)
    }

    pub fn finish(self, output: Var) -> ForwardPass<T> {
        let bindings = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        ForwardPass {
            tape: self.tape,
            output,
            input: None,
            bindings,
        }
    }
}

/// A completed forward pass, ready for a loss and backward.
pub struct ForwardPass<T: Scalar> {
    pub tape: Tape<T>,
    pub output: Var,
    /// Leaf holding the network input, when the caller asked to track it.
    pub input: Option<Var>,
    bindings: Vec<(ParamId, Var)>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.tape.value(self.output)
    }

    pub fn with_input(mut self, input: Var) -> Self {
        self.input = Some(input);
        self
    }

    /// Records the MSE against `target`, back-propagates, returns the loss.
    pub fn backward_mse(&mut self, target: &Tensor<T>) -> Result<T> {
        let loss = self.tape.mse(self.output, target)?;
        let value = self.tape.value(loss).data()[0];
        self.tape.backward(loss)?;
        Ok(value)
    }

    pub fn binding(&self, id: ParamId) -> Option<Var> {
        self.bindings.iter().find(|(p, _)| *p == id).map(|&(_, v)| v)
    }

    /// Gradients of every bound parameter that received one.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.bindings
            .iter()
            .filter_map(|&(id, v)| self.tape.grad(v).map(|g| (id, g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_normal_std_matches_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fan_in = 288;
        let t: Tensor<f64> = init_tensor(&[100_000], Init::HeNormal { fan_in }, &mut rng);
        let n = t.len() as f64;
        let mean = t.sum_f64() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let want = (2.0 / fan_in as f64).sqrt();
        assert!((var.sqrt() / want - 1.0).abs() < 0.05, "std {} vs {want}", var.sqrt());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            init_tensor::<f32, _>(&[64], Init::FanInUniform { fan_in: 16 }, &mut rng)
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
        assert!(draw(3).data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::ones(&[2]), Role::Trainable);
        let e = store.add("e", Tensor::ones(&[2]), Role::Frozen);
        let mut f = Forward::new(&mut store, Mode::Train);
        let (wv, ev) = (f.param(w), f.param(e));
        assert_eq!(f.param(w), wv);
        let y = f.tape.mul(wv, ev).unwrap();
        let s = f.tape.sum(y).unwrap();
        let mut pass = f.finish(s);
        pass.tape.backward(pass.output).unwrap();
        let grads = pass.param_grads();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, w);
    }
}
