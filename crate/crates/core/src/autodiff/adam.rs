use super::{Gradients, ParameterStore};
use crate::error::{Error, Result};

/// Adam with bias correction; the step count is tracked per parameter so
/// that parameters updated on different schedules stay correctly corrected.
#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay: each updated parameter first shrinks by
    /// `lr * weight_decay * theta`.
    pub weight_decay: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl Adam {
    /// Takes one descent step on every parameter present in `grads`.
    pub fn step(&self, store: &mut ParameterStore, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        for (id, g) in grads.touched() {
            let (tensor, slots) = store.tensor_and_slots_mut(id);
            slots.t += 1;
            let bc1 = 1.0 - self.beta1.powi(slots.t as i32);
            let bc2 = 1.0 - self.beta2.powi(slots.t as i32);
            let shrink = 1.0 - lr * self.weight_decay;
            for (k, theta) in tensor.values_mut().iter_mut().enumerate() {
                *theta *= shrink;
                let m = self.beta1 * slots.m[k] + (1.0 - self.beta1) * g[k];
                let v = self.beta2 * slots.v[k] + (1.0 - self.beta2) * g[k] * g[k];
                slots.m[k] = m;
                slots.v[k] = v;
                *theta -= lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
