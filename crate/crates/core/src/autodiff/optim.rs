use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{LlcError, Result};

/// Adam with bias correction and optional L2 weight decay folded into the
/// gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: HashMap<ParamId, Moments>,
}

#[derive(Clone, Debug)]
struct Moments {
    m: Tensor,
    v: Tensor,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            state: HashMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Updates every parameter in `ids` from its stored gradient, then
    /// clears those gradients.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        if let Some(&missing) = ids.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(LlcError::State(format!(
                "parameter '{}' has no gradient",
                store.get(missing).name
            )));
        }
        for &id in ids {
            let grad = store.grad(id).cloned().expect("checked above");
            let value = store.value_mut(id);
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros(value.rows(), value.cols()),
                v: Tensor::zeros(value.rows(), value.cols()),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - self.beta1.powi(st.t);
            let bc2 = 1.0 - self.beta2.powi(st.t);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (k, w) in value.data_mut().iter_mut().enumerate() {
                let g = grad.data()[k] + self.weight_decay * *w;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        for &id in ids {
            store.zero_grad(id);
        }
        Ok(())
    }
}

impl ParamStore {
    pub(crate) fn zero_grad(&mut self, id: ParamId) {
        if let Some(g) = self.grad_mut(id) {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Group;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Group::Weight, Tensor::scalar(w));
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        for g in [3.0, -0.01] {
            let (mut s, id) = scalar_store(1.0);
            s.set_grad(id, Tensor::scalar(g));
            let mut adam = Adam::new(0.1);
            adam.step(&mut s, &[id]).unwrap();
            let delta = s.value(id).item() - 1.0;
            assert!((delta.abs() - 0.1).abs() < 1e-6);
            assert_eq!(delta.signum(), -g.signum());
            assert_eq!(s.grad(id).unwrap().item(), 0.0);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let (mut s, id) = scalar_store(0.7);
        s.set_grad(id, Tensor::scalar(0.0));
        Adam::new(0.1).step(&mut s, &[id]).unwrap();
        assert_eq!(s.value(id).item(), 0.7);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let (mut s, id) = scalar_store(0.7);
        assert!(matches!(
            Adam::new(0.1).step(&mut s, &[id]),
            Err(LlcError::State(_))
        ));
    }

    /// Direct scalar recurrence for f(w) = w^2, independent of the
    /// tensor-based optimizer.
    fn reference_bowl(w0: f64, lr: f64, steps: i32) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        w
    }

    #[test]
    fn quadratic_bowl_converges() {
        let want = reference_bowl(1.0, 0.1, 200);
        assert!(want.abs() < 1e-2);
        let (mut s, id) = scalar_store(1.0);
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            let w = s.value(id).item();
            s.set_grad(id, Tensor::scalar(2.0 * w));
            adam.step(&mut s, &[id]).unwrap();
        }
        assert_eq!(s.value(id).item(), want);
    }
}
