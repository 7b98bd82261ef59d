//! Layer builders. `init_*` registers parameters in a store (fixed creation
//! order, shared seeded RNG); the matching forward function wires the layer
//! onto a tape from bindings.
//!
//! Initialization: weights U(-0.05, 0.05), biases zero, LSTM forget-gate
//! bias one, layer norm gamma one / beta zero.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use super::params::{Bindings, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::rng::Rng;

pub const INIT_RANGE: f64 = 0.05;

/// Training-time stochastic state. `Eval` disables dropout entirely.
pub enum Phase<'r> {
    Eval,
    Train { rng: &'r mut Rng },
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train { .. })
    }
}

fn uniform_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        *v = -INIT_RANGE + 2.0 * INIT_RANGE * rng.gen::<f64>();
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Sigmoid,
    Tanh,
    Gelu,
}

pub fn init_dense(store: &mut ParamStore, rng: &mut Rng, prefix: &str, in_dim: usize, out_dim: usize) {
    store.insert(&format!("{prefix}/w"), uniform_tensor(rng, in_dim, out_dim));
    store.insert(&format!("{prefix}/b"), Tensor::zeros(1, out_dim));
}

pub fn dense(tape: &mut Tape, b: &Bindings, prefix: &str, x: Var, act: Activation) -> Var {
    let wx = tape.matmul(x, b.var(&format!("{prefix}/w")));
    let z = tape.add_row(wx, b.var(&format!("{prefix}/b")));
    match act {
        Activation::Linear => z,
        Activation::Sigmoid => tape.sigmoid(z),
        Activation::Tanh => tape.tanh(z),
        Activation::Gelu => tape.gelu(z),
    }
}

/// Gate layout in the fused weight matrices: input, forget, cell, output.
pub fn init_lstm(store: &mut ParamStore, rng: &mut Rng, prefix: &str, in_dim: usize, units: usize) {
    store.insert(&format!("{prefix}/wx"), uniform_tensor(rng, in_dim, 4 * units));
    store.insert(&format!("{prefix}/wh"), uniform_tensor(rng, units, 4 * units));
    let mut bias = Tensor::zeros(1, 4 * units);
    for j in units..2 * units {
        bias.set(0, j, 1.0);
    }
    store.insert(&format!("{prefix}/b"), bias);
}

#[derive(Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// One LSTM step. Rows flagged inactive keep their previous state and emit
/// zeros, so padded steps cannot influence any later value.
pub fn lstm_step(
    tape: &mut Tape,
    b: &Bindings,
    prefix: &str,
    units: usize,
    x_t: Var,
    state: LstmState,
    active: &Rc<Vec<bool>>,
    inactive: &Rc<Vec<bool>>,
) -> (Var, LstmState) {
    let xw = tape.matmul(x_t, b.var(&format!("{prefix}/wx")));
    let hw = tape.matmul(state.h, b.var(&format!("{prefix}/wh")));
    let zsum = tape.add(xw, hw);
    let z = tape.add_row(zsum, b.var(&format!("{prefix}/b")));

    let zi = tape.slice_cols(z, 0, units);
    let zf = tape.slice_cols(z, units, 2 * units);
    let zg = tape.slice_cols(z, 2 * units, 3 * units);
    let zo = tape.slice_cols(z, 3 * units, 4 * units);
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);

    let fc = tape.mul(f, state.c);
    let ig = tape.mul(i, g);
    let c_new = tape.add(fc, ig);
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc);

    let h = tape.select_rows(h_new, state.h, active.clone());
    let c = tape.select_rows(c_new, state.c, active.clone());
    let out = tape.zero_rows(h, inactive.clone());
    (out, LstmState { h, c })
}

pub fn init_bilstm(store: &mut ParamStore, rng: &mut Rng, prefix: &str, in_dim: usize, units: usize) {
    init_lstm(store, rng, &format!("{prefix}/fw"), in_dim, units);
    init_lstm(store, rng, &format!("{prefix}/bw"), in_dim, units);
}

pub struct BiLstmOut {
    /// Per-step concatenated forward and backward outputs, `B x 2u` each.
    /// Inactive rows are zero.
    pub outputs: Vec<Var>,
    /// Concatenated final forward state and final backward state, `B x 2u`.
    pub final_state: Var,
}

/// Runs a bidirectional LSTM over `xs` (one `B x d` tensor per step).
/// `active[t][r]` says whether row `r` has a real observation at step `t`.
pub fn bilstm(
    tape: &mut Tape,
    b: &Bindings,
    prefix: &str,
    units: usize,
    xs: &[Var],
    active: &[Rc<Vec<bool>>],
    inactive: &[Rc<Vec<bool>>],
) -> BiLstmOut {
    bilstm_windowed(tape, b, prefix, units, xs, active, inactive, None)
}

/// Like [`bilstm`] but, when `detach_every` is set, the carried state is cut
/// from the tape after every `k` processed steps in each direction. Forward
/// values are unchanged; backprop is truncated to windows of length `k`.
pub fn bilstm_windowed(
    tape: &mut Tape,
    b: &Bindings,
    prefix: &str,
    units: usize,
    xs: &[Var],
    active: &[Rc<Vec<bool>>],
    inactive: &[Rc<Vec<bool>>],
    detach_every: Option<usize>,
) -> BiLstmOut {
    assert_eq!(xs.len(), active.len(), "mask length mismatch");
    assert!(!xs.is_empty(), "empty sequence");
    if let Some(k) = detach_every {
        assert!(k >= 1, "truncation window must be at least one step");
    }
    let batch = tape.value(xs[0]).rows();
    let zero = tape.constant(Tensor::zeros(batch, units));
    let fw_prefix = format!("{prefix}/fw");
    let bw_prefix = format!("{prefix}/bw");

    let detach = |tape: &mut Tape, state: LstmState, processed: usize| -> LstmState {
        match detach_every {
            Some(k) if processed > 0 && processed % k == 0 => {
                let h = tape.value(state.h).clone();
                let c = tape.value(state.c).clone();
                LstmState {
                    h: tape.constant(h),
                    c: tape.constant(c),
                }
            }
            _ => state,
        }
    };

    let mut state = LstmState { h: zero, c: zero };
    let mut fw_outs = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        state = detach(tape, state, t);
        let (out, next) = lstm_step(
            tape, b, &fw_prefix, units, xs[t], state, &active[t], &inactive[t],
        );
        fw_outs.push(out);
        state = next;
    }
    let fw_final = state.h;

    let mut state = LstmState { h: zero, c: zero };
    let mut bw_outs = vec_of_none(xs.len());
    for (i, t) in (0..xs.len()).rev().enumerate() {
        state = detach(tape, state, i);
        let (out, next) = lstm_step(
            tape, b, &bw_prefix, units, xs[t], state, &active[t], &inactive[t],
        );
        bw_outs[t] = Some(out);
        state = next;
    }
    let bw_final = state.h;

    let outputs: Vec<Var> = fw_outs
        .iter()
        .zip(bw_outs.iter())
        .map(|(&f, bwo)| tape.concat_cols(f, bwo.expect("filled above")))
        .collect();
    let final_state = tape.concat_cols(fw_final, bw_final);
    BiLstmOut {
        outputs,
        final_state,
    }
}

fn vec_of_none(n: usize) -> Vec<Option<Var>> {
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(None);
    }
    v
}

/// Additive attention over scalar positions: each column of `x` is scored by
/// `v . tanh(w * x_ij + b)` with parameters shared across positions, and the
/// scores are soft-maxed per row.
pub fn init_scalar_attention(store: &mut ParamStore, rng: &mut Rng, prefix: &str, hidden: usize) {
    store.insert(&format!("{prefix}/w"), uniform_tensor(rng, 1, hidden));
    store.insert(&format!("{prefix}/b"), Tensor::zeros(1, hidden));
    store.insert(&format!("{prefix}/v"), uniform_tensor(rng, hidden, 1));
}

pub struct AttentionOut {
    /// Softmax weights, `B x F`, rows sum to one.
    pub weights: Var,
    /// `concat(x, weights)`, `B x 2F`.
    pub concat: Var,
}

pub fn scalar_attention(tape: &mut Tape, b: &Bindings, prefix: &str, x: Var) -> AttentionOut {
    let (rows, cols) = tape.value(x).shape();
    let flat = tape.reshape(x, rows * cols, 1);
    let u = tape.matmul(flat, b.var(&format!("{prefix}/w")));
    let ub = tape.add_row(u, b.var(&format!("{prefix}/b")));
    let t = tape.tanh(ub);
    let scores_flat = tape.matmul(t, b.var(&format!("{prefix}/v")));
    let scores = tape.reshape(scores_flat, rows, cols);
    let weights = tape.softmax_rows(scores);
    let concat = tape.concat_cols(x, weights);
    AttentionOut { weights, concat }
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(&format!("{prefix}/gamma"), Tensor::filled(1, dim, 1.0));
    store.insert(&format!("{prefix}/beta"), Tensor::zeros(1, dim));
}

/// Inverted dropout: kept coordinates are scaled by `1 / (1 - p)` so the
/// expectation is unchanged; evaluation applies nothing.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, phase: &mut Phase) -> Var {
    match phase {
        Phase::Eval => x,
        Phase::Train { rng } => {
            let (r, c) = tape.value(x).shape();
            let mut mask = Tensor::zeros(r, c);
            let keep = 1.0 / (1.0 - p);
            for v in mask.data_mut() {
                *v = if rng.gen::<f64>() < p { 0.0 } else { keep };
            }
            tape.mul_const(x, Rc::new(mask))
        }
    }
}

/// Branch projection: Dense(in -> latent) + GELU, Dense(latent -> latent),
/// dropout, layer norm.
pub fn init_projection(
    store: &mut ParamStore,
    rng: &mut Rng,
    prefix: &str,
    in_dim: usize,
    latent: usize,
) {
    init_dense(store, rng, &format!("{prefix}/d1"), in_dim, latent);
    init_dense(store, rng, &format!("{prefix}/d2"), latent, latent);
    init_layer_norm(store, &format!("{prefix}/ln"), latent);
}

pub fn projection(
    tape: &mut Tape,
    b: &Bindings,
    prefix: &str,
    x: Var,
    dropout_p: f64,
    phase: &mut Phase,
) -> Var {
    let h1 = dense(tape, b, &format!("{prefix}/d1"), x, Activation::Gelu);
    let h2 = dense(tape, b, &format!("{prefix}/d2"), h1, Activation::Linear);
    let h3 = dropout(tape, h2, dropout_p, phase);
    tape.layer_norm(
        h3,
        b.var(&format!("{prefix}/ln/gamma")),
        b.var(&format!("{prefix}/ln/beta")),
    )
}

/// Builds per-step activity masks from raw input rows: a row is inactive at a
/// step when every input coordinate equals the padding value.
pub fn activity_masks(
    steps: &[Tensor],
    padding: f64,
) -> (Vec<Rc<Vec<bool>>>, Vec<Rc<Vec<bool>>>) {
    let mut active = Vec::with_capacity(steps.len());
    let mut inactive = Vec::with_capacity(steps.len());
    for x in steps {
        let mut act = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            act.push(x.row(i).iter().any(|&v| v != padding));
        }
        inactive.push(Rc::new(act.iter().map(|&a| !a).collect::<Vec<bool>>()));
        active.push(Rc::new(act));
    }
    (active, inactive)
}

pub fn param_prefix(parts: &[&str]) -> String {
    parts.join("/")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::act;
    use crate::nn::gradcheck::{grad_check, GradCheckConfig};
    use crate::rng::rng_from_seed;
    use alloc::vec;

    fn input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let mut t = Tensor::zeros(rows, cols);
        for v in t.data_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        t
    }

    fn all_active(steps: usize, batch: usize) -> (Vec<Rc<Vec<bool>>>, Vec<Rc<Vec<bool>>>) {
        let act = vec![Rc::new(vec![true; batch]); steps];
        let inact = vec![Rc::new(vec![false; batch]); steps];
        (act, inact)
    }

    #[test]
    fn affine_dense_gradients_are_exact_to_1e6() {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(3);
        init_dense(&mut store, &mut rng, "d", 5, 3);
        let x = input(4, 5, 11);
        let y: Rc<Vec<f64>> = Rc::new(vec![0.2, 0.8, 0.5, 0.1]);
        let report = grad_check(&mut store, &GradCheckConfig::default(), |tape, b| {
            let xi = tape.constant(x.clone());
            let z = dense(tape, b, "d", xi, Activation::Linear);
            let s = tape.slice_cols(z, 0, 1);
            // Mean squared error keeps the whole path polynomial.
            let yv = tape.constant(Tensor::from_vec(4, 1, y.to_vec()));
            let d = tape.sub(s, yv);
            let sq = tape.mul(d, d);
            let w = tape.constant(Tensor::filled(1, 4, 0.25));
            let m = tape.matmul(w, sq);
            let one = tape.constant(Tensor::filled(1, 1, 1.0));
            tape.mul(m, one)
        });
        assert!(
            report.max_rel_err < 1e-6,
            "affine path err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn lstm_step_matches_scalar_reference() {
        let units = 2;
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(7);
        init_lstm(&mut store, &mut rng, "l", 3, units);
        let x = input(1, 3, 21);

        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let xi = tape.constant(x.clone());
        let zeros = tape.constant(Tensor::zeros(1, units));
        let state = LstmState { h: zeros, c: zeros };
        let active: Rc<Vec<bool>> = Rc::new(vec![true]);
        let inactive: Rc<Vec<bool>> = Rc::new(vec![false]);
        let (out, next) = lstm_step(&mut tape, &b, "l", units, xi, state, &active, &inactive);

        // Straight-line reference for h0 = c0 = 0.
        let wx = store.get("l/wx");
        let bias = store.get("l/b");
        for u in 0..units {
            let z = |gate: usize| -> f64 {
                let col = gate * units + u;
                (0..3).map(|k| x.at(0, k) * wx.at(k, col)).sum::<f64>() + bias.at(0, col)
            };
            let i = act::sigmoid(z(0));
            let f = act::sigmoid(z(1));
            let g = act::tanh(z(2));
            let o = act::sigmoid(z(3));
            let c = f * 0.0 + i * g;
            let h = o * act::tanh(c);
            assert!((tape.value(out).at(0, u) - h).abs() < 1e-14);
            assert!((tape.value(next.c).at(0, u) - c).abs() < 1e-14);
        }
    }

    #[test]
    fn forget_gate_bias_initializes_to_one() {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(5);
        init_lstm(&mut store, &mut rng, "l", 4, 3);
        let b = store.get("l/b");
        for j in 0..12 {
            let expect = if (3..6).contains(&j) { 1.0 } else { 0.0 };
            assert_eq!(b.at(0, j), expect, "bias col {j}");
        }
    }

    #[test]
    fn bilstm_gradients_match_numeric() {
        let units = 3;
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(17);
        init_bilstm(&mut store, &mut rng, "bl", 4, units);
        init_dense(&mut store, &mut rng, "head", 2 * units, 1);
        let steps: Vec<Tensor> = (0..3).map(|t| input(2, 4, 100 + t)).collect();
        let (active, inactive) = all_active(3, 2);
        let y: Rc<Vec<f64>> = Rc::new(vec![1.0, 0.0]);

        let report = grad_check(&mut store, &GradCheckConfig::default(), |tape, b| {
            let xs: Vec<Var> = steps.iter().map(|s| tape.constant(s.clone())).collect();
            let out = bilstm(tape, b, "bl", units, &xs, &active, &inactive);
            let p = dense(tape, b, "head", out.final_state, Activation::Sigmoid);
            tape.mean_bce(p, y.clone())
        });
        assert!(
            report.max_rel_err < 1e-4,
            "bilstm err {} at {}[{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_coord
        );
    }

    #[test]
    fn masked_tail_is_invisible_bit_for_bit() {
        // Same weights, same 2 real steps; appending inactive steps must not
        // change outputs or final state in any bit.
        let units = 3;
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(23);
        init_bilstm(&mut store, &mut rng, "bl", 4, units);
        let real: Vec<Tensor> = (0..2).map(|t| input(2, 4, 300 + t)).collect();

        let run = |store: &ParamStore, steps: &[Tensor]| -> (Vec<Tensor>, Tensor) {
            let (active, inactive) = activity_masks(steps, -1.0);
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let xs: Vec<Var> = steps.iter().map(|s| tape.constant(s.clone())).collect();
            let out = bilstm(&mut tape, &b, "bl", units, &xs, &active, &inactive);
            (
                out.outputs.iter().map(|&v| tape.value(v).clone()).collect(),
                tape.value(out.final_state).clone(),
            )
        };

        let (outs_short, final_short) = run(&store, &real);
        let mut padded = real.clone();
        padded.push(Tensor::filled(2, 4, -1.0));
        padded.push(Tensor::filled(2, 4, -1.0));
        let (outs_pad, final_pad) = run(&store, &padded);

        assert_eq!(final_short, final_pad);
        for t in 0..2 {
            assert_eq!(outs_short[t], outs_pad[t]);
        }
        for t in 2..4 {
            assert!(outs_pad[t].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn truncation_window_keeps_forward_values() {
        // Detaching the carried state only cuts gradient paths; outputs and
        // the final state must be bit-identical to the full-BPTT run.
        let units = 3;
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(29);
        init_bilstm(&mut store, &mut rng, "bl", 4, units);
        let steps: Vec<Tensor> = (0..5).map(|t| input(2, 4, 500 + t)).collect();
        let (active, inactive) = all_active(5, 2);

        let run = |window: Option<usize>| -> (Vec<Tensor>, Tensor) {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let xs: Vec<Var> = steps.iter().map(|s| tape.constant(s.clone())).collect();
            let out =
                bilstm_windowed(&mut tape, &b, "bl", units, &xs, &active, &inactive, window);
            (
                out.outputs.iter().map(|&v| tape.value(v).clone()).collect(),
                tape.value(out.final_state).clone(),
            )
        };

        let (full_outs, full_final) = run(None);
        let (cut_outs, cut_final) = run(Some(2));
        assert_eq!(full_final, cut_final);
        for t in 0..5 {
            assert_eq!(full_outs[t], cut_outs[t]);
        }
    }

    #[test]
    fn truncation_window_cuts_gradient_flow() {
        // Window of one step: the forward LSTM at step t gets no gradient
        // from losses that only read later steps, so input-weight gradients
        // must differ from the full-BPTT run.
        let units = 2;
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(41);
        init_bilstm(&mut store, &mut rng, "bl", 3, units);
        init_dense(&mut store, &mut rng, "head", 2 * units, 1);
        let steps: Vec<Tensor> = (0..4).map(|t| input(1, 3, 600 + t)).collect();
        let (active, inactive) = all_active(4, 1);
        let y: Rc<Vec<f64>> = Rc::new(vec![1.0]);

        let grad_of = |window: Option<usize>| -> Tensor {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let xs: Vec<Var> = steps.iter().map(|s| tape.constant(s.clone())).collect();
            let out =
                bilstm_windowed(&mut tape, &b, "bl", units, &xs, &active, &inactive, window);
            let p = dense(&mut tape, &b, "head", out.final_state, Activation::Sigmoid);
            let loss = tape.mean_bce(p, y.clone());
            let grads = tape.backward(loss);
            grads.get(b.var("bl/fw/wx")).expect("wx gradient").clone()
        };

        let full = grad_of(None);
        let cut = grad_of(Some(1));
        assert_ne!(full, cut);
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(31);
        init_scalar_attention(&mut store, &mut rng, "att", 8);
        let x = input(5, 7, 41);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let xi = tape.constant(x);
        let out = scalar_attention(&mut tape, &b, "att", xi);
        let w = tape.value(out.weights);
        assert_eq!(w.shape(), (5, 7));
        assert_eq!(tape.value(out.concat).shape(), (5, 14));
        for i in 0..5 {
            let row = w.row(i);
            assert!(row.iter().all(|&v| v >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn attention_gradients_match_numeric() {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(37);
        init_scalar_attention(&mut store, &mut rng, "att", 6);
        init_dense(&mut store, &mut rng, "head", 8, 1);
        let x = input(3, 4, 43);
        let y: Rc<Vec<f64>> = Rc::new(vec![1.0, 0.0, 1.0]);
        let report = grad_check(&mut store, &GradCheckConfig::default(), |tape, b| {
            let xi = tape.constant(x.clone());
            let out = scalar_attention(tape, b, "att", xi);
            let p = dense(tape, b, "head", out.concat, Activation::Sigmoid);
            tape.mean_bce(p, y.clone())
        });
        assert!(
            report.max_rel_err < 1e-4,
            "attention err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn projection_gradients_match_numeric_with_fixed_dropout() {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(53);
        init_projection(&mut store, &mut rng, "proj", 6, 8);
        init_dense(&mut store, &mut rng, "head", 8, 1);
        let x = input(4, 6, 59);
        let y: Rc<Vec<f64>> = Rc::new(vec![0.0, 1.0, 1.0, 0.0]);
        let report = grad_check(&mut store, &GradCheckConfig::default(), |tape, b| {
            // Fresh RNG per call keeps the dropout mask identical across the
            // analytic and the two numeric evaluations.
            let mut drop_rng = rng_from_seed(61);
            let mut phase = Phase::Train { rng: &mut drop_rng };
            let xi = tape.constant(x.clone());
            let h = projection(tape, b, "proj", xi, 0.1, &mut phase);
            let p = dense(tape, b, "head", h, Activation::Sigmoid);
            tape.mean_bce(p, y.clone())
        });
        assert!(
            report.max_rel_err < 1e-4,
            "projection err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let x = input(50, 40, 67);
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let mut phase = Phase::Eval;
        let out = dropout(&mut tape, xi, 0.1, &mut phase);
        assert_eq!(tape.value(out), &x);

        let mut rng = rng_from_seed(71);
        let mut phase = Phase::Train { rng: &mut rng };
        let out = dropout(&mut tape, xi, 0.1, &mut phase);
        let v = tape.value(out);
        let mut zeros = 0usize;
        for i in 0..x.len() {
            let (a, b) = (x.data()[i], v.data()[i]);
            if b == 0.0 && a != 0.0 {
                zeros += 1;
            } else {
                assert!((b - a / 0.9).abs() < 1e-12);
            }
        }
        let rate = zeros as f64 / x.len() as f64;
        assert!((rate - 0.1).abs() < 0.03, "dropout rate {rate}");
    }

    #[test]
    fn activity_masks_flag_fully_padded_rows_only() {
        let mut step = Tensor::filled(3, 4, -1.0);
        step.set(1, 2, 0.5);
        // Row 0 fully padded, row 1 has one real value, row 2 fully padded.
        let (active, inactive) = activity_masks(&[step], -1.0);
        assert_eq!(active[0].as_slice(), &[false, true, false]);
        assert_eq!(inactive[0].as_slice(), &[true, false, true]);
    }
}
