//! Reverse-mode autodiff over a flat tape of matrix operations.
//!
//! Ops are appended in topological order, so the backward sweep is a single
//! reverse pass. A fresh tape is built per batch; parameters enter as leaves
//! and their gradients are read back out of `Grads` afterwards.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::act;
use super::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BCE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Row-broadcast add: `a (m x n) + bias (1 x n)`.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    /// Per-row choice: row i of the output is `a[i]` where `take_a[i]`, else `b[i]`.
    SelectRows(Var, Var, Rc<Vec<bool>>),
    /// Zeroes rows where the flag is set.
    ZeroRows(Var, Rc<Vec<bool>>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    /// Elementwise product with a constant (dropout masks).
    MulConst(Var, Rc<Tensor>),
    /// Mean binary cross entropy of predictions `p (n x 1)` against constant
    /// targets. Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`; the
    /// gradient passes through the clamp unchanged.
    MeanBce {
        p: Var,
        y: Rc<Vec<f64>>,
    },
}

struct Node {
    op: Op,
    val: Tensor,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].val
    }

    fn push(&mut self, op: Op, val: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            val,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf without gradient tracking (inputs, targets).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Leaf with gradient tracking (parameters, grad-checked inputs).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let val = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), val, ng)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.value(a).shape();
        assert_eq!(
            self.value(bias).shape(),
            (1, n),
            "bias must be 1x{n} for a {m}x{n} input"
        );
        let mut val = self.value(a).clone();
        for i in 0..m {
            for (o, &b) in val.row_mut(i).iter_mut().zip(self.value(bias).row(0)) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        self.push(Op::AddRow(a, bias), val, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let val = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), val, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let val = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), val, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let val = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), val, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let val = self.value(a).map(|x| c * x);
        let ng = self.needs(a);
        self.push(Op::Scale(a, c), val, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let val = self.value(a).map(act::sigmoid);
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), val, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let val = self.value(a).map(act::tanh);
        let ng = self.needs(a);
        self.push(Op::Tanh(a), val, ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let val = self.value(a).map(act::gelu);
        let ng = self.needs(a);
        self.push(Op::Gelu(a), val, ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut val = self.value(a).clone();
        for i in 0..val.rows() {
            act::softmax_in_place(val.row_mut(i));
        }
        let ng = self.needs(a);
        self.push(Op::SoftmaxRows(a), val, ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.value(a).shape();
        let (rb, cb) = self.value(b).shape();
        assert_eq!(ra, rb, "concat_cols row mismatch {ra} vs {rb}");
        let mut val = Tensor::zeros(ra, ca + cb);
        for i in 0..ra {
            val.row_mut(i)[..ca].copy_from_slice(self.value(a).row(i));
            val.row_mut(i)[ca..].copy_from_slice(self.value(b).row(i));
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::ConcatCols(a, b), val, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.value(a).shape();
        assert!(start < end && end <= c, "slice {start}..{end} out of 0..{c}");
        let mut val = Tensor::zeros(r, end - start);
        for i in 0..r {
            val.row_mut(i).copy_from_slice(&self.value(a).row(i)[start..end]);
        }
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, start, end), val, ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let val = self.value(a).reshaped(rows, cols);
        let ng = self.needs(a);
        self.push(Op::Reshape(a), val, ng)
    }

    pub fn select_rows(&mut self, a: Var, b: Var, take_a: Rc<Vec<bool>>) -> Var {
        let shape = self.value(a).shape();
        assert_eq!(shape, self.value(b).shape(), "select_rows shape mismatch");
        assert_eq!(shape.0, take_a.len(), "select_rows mask length mismatch");
        let mut val = self.value(b).clone();
        for (i, &t) in take_a.iter().enumerate() {
            if t {
                let src = self.value(a).row(i).to_vec();
                val.row_mut(i).copy_from_slice(&src);
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::SelectRows(a, b, take_a), val, ng)
    }

    pub fn zero_rows(&mut self, a: Var, zero: Rc<Vec<bool>>) -> Var {
        assert_eq!(self.value(a).rows(), zero.len(), "zero_rows mask length");
        let mut val = self.value(a).clone();
        for (i, &z) in zero.iter().enumerate() {
            if z {
                for v in val.row_mut(i) {
                    *v = 0.0;
                }
            }
        }
        let ng = self.needs(a);
        self.push(Op::ZeroRows(a, zero), val, ng)
    }

    /// Row-wise layer normalization with affine parameters:
    /// `y = gamma * (x - mean) / sqrt(var + eps) + beta` per row, population
    /// variance, `eps = LAYER_NORM_EPS`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.value(x).shape();
        assert_eq!(self.value(gamma).shape(), (1, c), "gamma must be 1x{c}");
        assert_eq!(self.value(beta).shape(), (1, c), "beta must be 1x{c}");
        let mut val = Tensor::zeros(r, c);
        for i in 0..r {
            let row = self.value(x).row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            for j in 0..c {
                let xhat = (row[j] - mean) * inv;
                val.set(
                    i,
                    j,
                    self.value(gamma).at(0, j) * xhat + self.value(beta).at(0, j),
                );
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(Op::LayerNorm { x, gamma, beta }, val, ng)
    }

    pub fn mul_const(&mut self, a: Var, mask: Rc<Tensor>) -> Var {
        let val = self.value(a).zip_map(&mask, |x, m| x * m);
        let ng = self.needs(a);
        self.push(Op::MulConst(a, mask), val, ng)
    }

    pub fn mean_bce(&mut self, p: Var, y: Rc<Vec<f64>>) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.cols(), 1, "predictions must be nx1");
        assert_eq!(pv.rows(), y.len(), "target length mismatch");
        let n = y.len() as f64;
        let mut loss = 0.0;
        for (i, &t) in y.iter().enumerate() {
            let pc = pv.at(i, 0).clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= t * libm::log(pc) + (1.0 - t) * libm::log(1.0 - pc);
        }
        let val = Tensor::from_vec(1, 1, vec![loss / n]);
        let ng = self.needs(p);
        self.push(Op::MeanBce { p, y }, val, ng)
    }

    /// Reverse sweep from a scalar loss. Returns one gradient slot per node;
    /// slots of nodes that do not require gradients stay empty.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let g = match grads[id].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = g.matmul_nt(self.value(*b));
                        acc(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let db = self.value(*a).matmul_tn(&g);
                        acc(&mut grads[b.0], db);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*bias) {
                        acc(&mut grads[bias.0], g.sum_rows());
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads[b.0], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads[b.0], g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g.zip_map(self.value(*b), |x, y| x * y));
                    }
                    if self.needs(*b) {
                        acc(&mut grads[b.0], g.zip_map(self.value(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g.map(|x| c * x));
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].val;
                        acc(&mut grads[a.0], g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)));
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].val;
                        acc(&mut grads[a.0], g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv)));
                    }
                }
                Op::Gelu(a) => {
                    if self.needs(*a) {
                        let x = self.value(*a);
                        acc(&mut grads[a.0], g.zip_map(x, |gv, xv| gv * act::gelu_prime(xv)));
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].val;
                        let (r, c) = y.shape();
                        let mut da = Tensor::zeros(r, c);
                        for i in 0..r {
                            let dot: f64 = (0..c).map(|j| g.at(i, j) * y.at(i, j)).sum();
                            for j in 0..c {
                                da.set(i, j, y.at(i, j) * (g.at(i, j) - dot));
                            }
                        }
                        acc(&mut grads[a.0], da);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let (r, c) = g.shape();
                    if self.needs(*a) {
                        let mut da = Tensor::zeros(r, ca);
                        for i in 0..r {
                            da.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                        }
                        acc(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(r, c - ca);
                        for i in 0..r {
                            db.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                        }
                        acc(&mut grads[b.0], db);
                    }
                }
                Op::SliceCols(a, start, _end) => {
                    if self.needs(*a) {
                        let (r, c) = self.value(*a).shape();
                        let mut da = Tensor::zeros(r, c);
                        for i in 0..r {
                            da.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                        }
                        acc(&mut grads[a.0], da);
                    }
                }
                Op::Reshape(a) => {
                    if self.needs(*a) {
                        let (r, c) = self.value(*a).shape();
                        acc(&mut grads[a.0], g.reshaped(r, c));
                    }
                }
                Op::SelectRows(a, b, take_a) => {
                    let (r, c) = g.shape();
                    if self.needs(*a) {
                        let mut da = Tensor::zeros(r, c);
                        for (i, &t) in take_a.iter().enumerate() {
                            if t {
                                da.row_mut(i).copy_from_slice(g.row(i));
                            }
                        }
                        acc(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(r, c);
                        for (i, &t) in take_a.iter().enumerate() {
                            if !t {
                                db.row_mut(i).copy_from_slice(g.row(i));
                            }
                        }
                        acc(&mut grads[b.0], db);
                    }
                }
                Op::ZeroRows(a, zero) => {
                    if self.needs(*a) {
                        let mut da = g.clone();
                        for (i, &z) in zero.iter().enumerate() {
                            if z {
                                for v in da.row_mut(i) {
                                    *v = 0.0;
                                }
                            }
                        }
                        acc(&mut grads[a.0], da);
                    }
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gamma);
                    let (r, c) = xv.shape();
                    let nf = c as f64;
                    let mut dx = Tensor::zeros(r, c);
                    let mut dgamma = Tensor::zeros(1, c);
                    let mut dbeta = Tensor::zeros(1, c);
                    for i in 0..r {
                        let row = xv.row(i);
                        let mean = row.iter().sum::<f64>() / nf;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
                        // dy/dx through xhat = (x - mean) * inv:
                        // dx = inv * (dl_xhat - mean(dl_xhat) - xhat * mean(dl_xhat * xhat))
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        let mut dl_xhat = vec![0.0; c];
                        for j in 0..c {
                            let xhat = (row[j] - mean) * inv;
                            let d = g.at(i, j) * gv.at(0, j);
                            dl_xhat[j] = d;
                            sum_d += d;
                            sum_dx += d * xhat;
                            dgamma.data_mut()[j] += g.at(i, j) * xhat;
                            dbeta.data_mut()[j] += g.at(i, j);
                        }
                        for j in 0..c {
                            let xhat = (row[j] - mean) * inv;
                            dx.set(
                                i,
                                j,
                                inv * (dl_xhat[j] - sum_d / nf - xhat * sum_dx / nf),
                            );
                        }
                    }
                    if self.needs(*x) {
                        acc(&mut grads[x.0], dx);
                    }
                    if self.needs(*gamma) {
                        acc(&mut grads[gamma.0], dgamma);
                    }
                    if self.needs(*beta) {
                        acc(&mut grads[beta.0], dbeta);
                    }
                }
                Op::MulConst(a, mask) => {
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g.zip_map(mask, |x, m| x * m));
                    }
                }
                Op::MeanBce { p, y } => {
                    if self.needs(*p) {
                        let pv = self.value(*p);
                        let n = y.len() as f64;
                        let scale = g.at(0, 0) / n;
                        let mut dp = Tensor::zeros(pv.rows(), 1);
                        for (i, &t) in y.iter().enumerate() {
                            let pc = pv.at(i, 0).clamp(BCE_EPS, 1.0 - BCE_EPS);
                            dp.set(i, 0, scale * (-t / pc + (1.0 - t) / (1.0 - pc)));
                        }
                        acc(&mut grads[p.0], dp);
                    }
                }
            }
        }
        Grads(grads)
    }
}

fn acc(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(t) => t.add_assign(&delta),
        None => *slot = Some(delta),
    }
}
