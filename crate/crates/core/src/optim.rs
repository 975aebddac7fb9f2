//! Adam optimizer over a [`ParameterStore`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the global gradient norm down to this value when exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Returns the global gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParameterStore) -> f64 {
        let sq: f64 = store
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .filter_map(|(_, t)| t.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum();
        let norm = libm::sqrt(sq);
        let clip = match self.config.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for (name, t) in store.iter_mut() {
            if !t.requires_grad() {
                continue;
            }
            let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(name.into())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for (i, w) in t.data_mut().iter_mut().enumerate() {
                let g = grad[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= c.learning_rate * mh / (libm::sqrt(vh) + c.epsilon);
            }
        }
        store.zero_grads();
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::vector(vec![3.0, -2.0]));
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.1,
            clip_norm: None,
            ..AdamConfig::default()
        });
        for _ in 0..500 {
            let tape = Tape::new();
            let x = tape.param(&store, "x").unwrap();
            let loss = x.mul(x).unwrap().sum();
            tape.backward_into(loss, &mut store).unwrap();
            adam.step(&mut store);
        }
        assert!(store.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2));
        assert!(store.get("x").unwrap().grad().is_none());
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::vector(vec![1.0]));
        store.get_mut("x").unwrap().set_requires_grad(false);
        store.get_mut("x").unwrap().accumulate_grad(&[1.0]).unwrap();
        Adam::new(AdamConfig::default()).step(&mut store);
        assert_eq!(store.get("x").unwrap().data(), &[1.0]);
    }
}
