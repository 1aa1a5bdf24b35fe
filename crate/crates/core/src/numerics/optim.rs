use std::collections::HashMap;

use crate::numerics::{ParamStore, Tensor};

pub trait Optimizer {
    /// Applies one update from the accumulated gradients. Gradients are left
    /// in place; callers zero them before the next step.
    fn step(&mut self, store: &mut ParamStore);
}

/// Adaptive-moment descent with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u32,
    moments: HashMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            moments: HashMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, slot) in store.iter_mut() {
            if !slot.trainable {
                continue;
            }
            let (m, v) = self.moments.entry(name.to_string()).or_insert_with(|| {
                let (r, c) = slot.value.shape();
                (Tensor::zeros(r, c), Tensor::zeros(r, c))
            });
            let grad = slot.grad.data();
            let m = m.data_mut();
            let v = v.data_mut();
            for (i, p) in slot.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
    }
}

/// Plain gradient descent with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore) {
        for (_, slot) in store.iter_mut() {
            if !slot.trainable {
                continue;
            }
            let grad = slot.grad.data();
            for (p, g) in slot.value.data_mut().iter_mut().zip(grad) {
                *p -= self.lr * (g + self.weight_decay * *p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap(), true);
        s.insert("frozen", Tensor::scalar(4.0), false);
        for (_, slot) in s.iter_mut() {
            slot.grad.fill(0.3);
        }
        s
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let before = store();
        let mut after = before.clone();
        Adam::new(0.0, 0.001).step(&mut after);
        Sgd { lr: 0.0, weight_decay: 0.001 }.step(&mut after);
        assert_eq!(before.value("w"), after.value("w"));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut s = store();
        Adam::new(0.01, 0.0).step(&mut s);
        let w = s.value("w").unwrap().data();
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps).
        for (now, was) in w.iter().zip([1.0, -2.0, 0.5]) {
            assert!((was - now - 0.01).abs() < 1e-9);
        }
        assert_eq!(s.value("frozen").unwrap().item(), 4.0);
    }

    #[test]
    fn sgd_step() {
        let mut s = store();
        Sgd { lr: 0.1, weight_decay: 0.0 }.step(&mut s);
        assert!((s.value("w").unwrap().get(0, 0) - 0.97).abs() < 1e-15);
    }
}
