//! Adam optimizer over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::params::{Gradients, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub struct Adam<T> {
    config: AdamConfig,
    step: i32,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update. Parameters without a gradient buffer are left
    /// untouched and their moments are not advanced.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        if self.m.len() < params.len() {
            self.m.resize(params.len(), None);
            self.v.resize(params.len(), None);
        }
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for (id, g) in grads.iter() {
            let p = params.get_mut(id);
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(p.shape()));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
