//! Adaptive-moment optimizer over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is aligned with the store entries; `None`
    /// entries are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Usage(format!(
                "gradient list has {} entries, store has {}",
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (param, g)) in store.entries_mut().iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if lr == 0.0 {
                continue;
            }
            let n = g.len();
            let m = self.m[i].get_or_insert_with(|| vec![0.0; n]);
            let v = self.v[i].get_or_insert_with(|| vec![0.0; n]);
            let w = param.value.data_mut();
            for j in 0..n {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                w[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Sums per-example gradient lists in order and scales by `1/n`.
pub fn average_grads(per_example: Vec<Vec<Option<Tensor>>>) -> Vec<Option<Tensor>> {
    let n = per_example.len().max(1) as f64;
    let mut iter = per_example.into_iter();
    let Some(mut total) = iter.next() else {
        return Vec::new();
    };
    for grads in iter {
        for (t, g) in total.iter_mut().zip(grads) {
            match (t.as_mut(), g) {
                (Some(t), Some(g)) => {
                    for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                (None, Some(g)) => *t = Some(g),
                _ => {}
            }
        }
    }
    for t in total.iter_mut().flatten() {
        for a in t.data_mut() {
            *a /= n;
        }
    }
    total
}
