use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Role};
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment buffers for every trainable tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = |role: Role, n: usize| if role == Role::Trainable { vec![T::zero(); n] } else { Vec::new() };
        let m: Vec<Vec<T>> = store.entries().iter().map(|e| zeros(e.role, e.value.len())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Weight decay is either added to the
    /// gradient (`g + wd·θ`) or, when `decoupled`, applied directly to the
    /// parameters. Frozen tensors and buffers are never touched.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[(ParamId, Tensor<T>)],
        lr: f64,
        weight_decay: f64,
        decoupled: bool,
    ) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Consistency("optimizer state built for a different model".into()));
        }
        let mut by_id: Vec<Option<&Tensor<T>>> = vec![None; store.len()];
        for (id, g) in grads {
            by_id[id.0] = Some(g);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            if store.entry(id).role != Role::Trainable {
                continue;
            }
            let name = &store.entry(id).name;
            let g = by_id[id.0].ok_or_else(|| Error::Consistency(format!("trainable tensor {name} has no gradient")))?;
            if g.len() != store.get(id).len() {
                return Err(Error::Consistency(format!("gradient for {name} has the wrong size")));
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let theta = store.get_mut(id).data_mut();
            for k in 0..theta.len() {
                let th = theta[k].as_f64();
                let mut gk = g.data()[k].as_f64();
                let mut next = th;
                if decoupled {
                    next -= lr * weight_decay * th;
                } else {
                    gk += weight_decay * th;
                }
                let mk = BETA1 * m[k].as_f64() + (1.0 - BETA1) * gk;
                let vk = BETA2 * v[k].as_f64() + (1.0 - BETA2) * gk * gk;
                m[k] = T::of(mk);
                v[k] = T::of(vk);
                next -= lr * (mk / c1) / ((vk / c2).sqrt() + EPSILON);
                theta[k] = T::of(next);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64, role: Role) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::from_f64(&[1], &[value]).unwrap(), role);
        (s, id)
    }

    fn grad(id: ParamId, g: f64) -> Vec<(ParamId, Tensor<f64>)> {
        vec![(id, Tensor::from_f64(&[1], &[g]).unwrap())]
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let (mut s, id) = one(0.0, Role::Trainable);
        let mut adam = AdamState::new(&s);
        adam.step(&mut s, &grad(id, 4.0), 1e-3, 0.0, false).unwrap();
        // m̂ = 4, v̂ = 16, update = 1e-3 · 4 / (4 + 1e-8)
        let want = -1e-3 * 4.0 / (4.0 + EPSILON);
        assert!((s.get(id).data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut s, id) = one(0.7, Role::Trainable);
        let mut adam = AdamState::new(&s);
        for _ in 0..5 {
            adam.step(&mut s, &grad(id, 0.0), 1e-3, 0.0, false).unwrap();
        }
        assert_eq!(s.get(id).data()[0], 0.7);
    }

    #[test]
    fn decay_shrinks_positive_weights_in_both_modes() {
        for decoupled in [false, true] {
            let (mut s, id) = one(0.5, Role::Trainable);
            let mut adam = AdamState::new(&s);
            adam.step(&mut s, &grad(id, 0.0), 1e-3, 5e-5, decoupled).unwrap();
            assert!(s.get(id).data()[0] < 0.5);
        }
    }

    #[test]
    fn frozen_skipped_and_missing_gradient_fatal() {
        let (mut s, id) = one(1.0, Role::Frozen);
        let mut adam = AdamState::new(&s);
        adam.step(&mut s, &[], 1e-3, 5e-5, false).unwrap();
        assert_eq!(s.get(id).data()[0], 1.0);

        let (mut s, _) = one(1.0, Role::Trainable);
        let mut adam = AdamState::new(&s);
        let err = adam.step(&mut s, &[], 1e-3, 0.0, false).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)), "{err}");
    }
}
