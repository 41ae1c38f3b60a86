use serde::{Deserialize, Serialize};

use crate::tensor::{ParamStore, Real};

/// Moment estimates, one buffer pair per parameter in store order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Adam with decoupled weight decay. Decay applies to matrices only; biases,
/// norm gains and other vectors are not decayed.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: AdamWState::default(),
        }
    }

    /// One update with the accumulated gradients; gradients are left as is.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, lr: f64) {
        let s = &mut self.state;
        if s.m.is_empty() {
            s.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            s.v = s.m.clone();
        }
        s.t += 1;
        let c1 = 1.0 - self.beta1.powi(s.t as i32);
        let c2 = 1.0 - self.beta2.powi(s.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let decay = if p.shape().len() == 2 { self.weight_decay } else { 0.0 };
            let grad: Vec<f64> = p.grad().iter().map(|g| g.as_f64()).collect();
            let (m, v) = (&mut s.m[i], &mut s.v[i]);
            for ((w, g), (m, v)) in p.value_mut().iter_mut().zip(grad).zip(m.iter_mut().zip(v.iter_mut())) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                let x = w.as_f64();
                *w = T::of(x - lr * (update + decay * x));
            }
        }
    }
}
