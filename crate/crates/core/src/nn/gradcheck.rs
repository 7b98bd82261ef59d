//! Finite-difference verification of analytic gradients.
//!
//! The harness perturbs individual parameter coordinates by `h`, rebuilds the
//! forward pass twice (central differences), and compares against the tape
//! gradient. Relative error uses the scale `max(1, |analytic|, |numeric|)`,
//! so tiny gradients are compared absolutely and large ones relatively.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::params::{Bindings, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Max coordinates checked per parameter; larger tensors are subsampled
    /// deterministically.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            coords_per_param: 24,
            seed: 0x9d5c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Parameter and coordinate where the worst error occurred.
    pub worst_param: String,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Runs the check. `loss_fn` must rebuild the same deterministic scalar loss
/// on every call (fixed inputs, fixed dropout masks).
pub fn grad_check(
    store: &mut ParamStore,
    cfg: &GradCheckConfig,
    mut loss_fn: impl FnMut(&mut Tape, &Bindings) -> Var,
) -> GradCheckReport {
    // Analytic pass.
    let mut tape = Tape::new();
    let bindings = store.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bindings);
    let grads = tape.backward(loss);
    let mut analytic: BTreeMap<String, Tensor> = BTreeMap::new();
    for name in store.names().map(String::from).collect::<Vec<_>>() {
        let var = bindings.var(&name);
        let g = grads.get(var).map(|t| t.clone()).unwrap_or_else(|| {
            let (r, c) = store.get(&name).shape();
            Tensor::zeros(r, c)
        });
        analytic.insert(name, g);
    }
    drop(tape);

    let mut eval = |store: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let bindings = store.bind(&mut tape);
        let loss = loss_fn(&mut tape, &bindings);
        tape.value(loss).at(0, 0)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst_param: String::new(),
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };

    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let len = store.get(&name).len();
        let coords: Vec<usize> = if len <= cfg.coords_per_param {
            (0..len).collect()
        } else {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, &name));
            let mut picked =
                rand::seq::index::sample(&mut rng, len, cfg.coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };
        for i in coords {
            let orig = store.get(&name).data()[i];
            store.get_mut(&name).data_mut()[i] = orig + cfg.h;
            let lp = eval(store);
            store.get_mut(&name).data_mut()[i] = orig - cfg.h;
            let lm = eval(store);
            store.get_mut(&name).data_mut()[i] = orig;

            let numeric = (lp - lm) / (2.0 * cfg.h);
            let a = analytic[&name].data()[i];
            let scale = a.abs().max(numeric.abs()).max(1.0);
            let rel = (a - numeric).abs() / scale;
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_coord = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}
