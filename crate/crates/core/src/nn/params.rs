//! Named parameter storage and the Adam optimizer.
//!
//! Parameters live in a `BTreeMap` so every iteration order (updates,
//! serialization, gradient checks) is deterministic.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::tape::{Grads, Tape, Var};
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    /// First and second Adam moments, zero until the first step.
    pub m: Tensor,
    pub v: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let (r, c) = value.shape();
        Param {
            value,
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            grad: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    /// Number of Adam steps taken so far.
    step: u64,
}

/// Tape leaves for every parameter of a store, keyed by name.
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a fresh parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        let prev = self.params.insert(String::from(name), Param::new(value));
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_coords(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Puts every parameter on the tape as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        let mut vars = BTreeMap::new();
        for (name, p) in &self.params {
            vars.insert(name.clone(), tape.param(p.value.clone()));
        }
        Bindings { vars }
    }

    /// Copies gradients computed by a backward pass into the store.
    /// Parameters the loss does not reach get zero gradients.
    pub fn take_grads(&mut self, bindings: &Bindings, grads: &Grads) {
        for (name, p) in self.params.iter_mut() {
            let var = bindings.vars[name];
            p.grad = Some(match grads.get(var) {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = p.value.shape();
                    Tensor::zeros(r, c)
                }
            });
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update over all parameters. Fails on
    /// non-finite gradients, naming the offending parameter.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(cfg.beta1, t);
        let bc2 = 1.0 - libm::pow(cfg.beta2, t);
        for (name, p) in self.params.iter_mut() {
            let grad = p.grad.as_ref().ok_or_else(|| {
                CoreError::numeric(format!("adam step without gradient for {name}"))
            })?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(CoreError::numeric(format!(
                    "non-finite gradient in {name}"
                )));
            }
            for i in 0..p.value.len() {
                let g = grad.data()[i];
                let m = cfg.beta1 * p.m.data()[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * p.v.data()[i] + (1.0 - cfg.beta2) * g * g;
                p.m.data_mut()[i] = m;
                p.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                p.value.data_mut()[i] -= cfg.lr * mhat / (libm::sqrt(vhat) + cfg.eps);
            }
        }
        Ok(())
    }

    /// Drops Adam moments and the step counter. Used when fine-tuning starts
    /// from a trained checkpoint with fresh optimizer state.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in self.params.values_mut() {
            p.m.fill(0.0);
            p.v.fill(0.0);
            p.grad = None;
        }
    }

    /// Flat snapshot of all parameter values in name order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(n, p)| (n.clone(), p.value.clone()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) {
        for (name, value) in snapshot {
            self.params
                .get_mut(name)
                .unwrap_or_else(|| panic!("snapshot has unknown parameter {name}"))
                .value = value.clone();
        }
    }

    pub fn param(&self, name: &str) -> &Param {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn store_with(name: &str, vals: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = vals.len();
        s.insert(name, Tensor::from_vec(1, n, vals));
        s
    }

    fn set_grad(s: &mut ParamStore, name: &str, g: Vec<f64>) {
        let n = g.len();
        s.params.get_mut(name).unwrap().grad = Some(Tensor::from_vec(1, n, g));
    }

    #[test]
    fn adam_matches_hand_rolled_reference() {
        let cfg = AdamConfig::default();
        let mut s = store_with("w", vec![1.0, -2.0]);
        let grads = [vec![0.5, -0.25], vec![-0.1, 0.4], vec![0.3, 0.3]];

        // Independent reference implementation, elementwise.
        let mut w = [1.0, -2.0];
        let mut m = [0.0, 0.0];
        let mut v = [0.0, 0.0];
        for (t, g) in grads.iter().enumerate() {
            set_grad(&mut s, "w", g.clone());
            s.adam_step(&cfg).unwrap();
            let tf = (t + 1) as f64;
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mhat = m[i] / (1.0 - libm::pow(0.9, tf));
                let vhat = v[i] / (1.0 - libm::pow(0.999, tf));
                w[i] -= 0.001 * mhat / (libm::sqrt(vhat) + 1e-8);
            }
            assert_eq!(s.get("w").data(), &w[..], "step {}", t + 1);
        }
        assert_eq!(s.step_count(), 3);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut s = store_with("w", vec![0.0]);
        set_grad(&mut s, "w", vec![f64::NAN]);
        let err = s.adam_step(&AdamConfig::default()).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("non-finite gradient"));
        assert!(msg.contains('w'), "error should name the parameter: {msg}");
    }

    #[test]
    fn reset_optimizer_zeroes_moments_and_step() {
        let mut s = store_with("w", vec![1.0]);
        set_grad(&mut s, "w", vec![0.5]);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert!(s.params["w"].m.data()[0] != 0.0);
        s.reset_optimizer();
        assert_eq!(s.step_count(), 0);
        assert_eq!(s.params["w"].m.data()[0], 0.0);
        assert_eq!(s.params["w"].v.data()[0], 0.0);
    }

    #[test]
    fn snapshot_restore_round_trips() {
        let mut s = store_with("w", vec![1.0, 2.0]);
        let snap = s.snapshot();
        set_grad(&mut s, "w", vec![1.0, 1.0]);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_ne!(s.get("w").data(), &[1.0, 2.0][..]);
        s.restore(&snap);
        assert_eq!(s.get("w").data(), &[1.0, 2.0][..]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(1, 1));
        s.insert("w", Tensor::zeros(1, 1));
    }
}
