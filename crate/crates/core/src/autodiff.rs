//! Minimal reverse-mode automatic differentiation over `Array2<f64>`.
//!
//! The training graph is small (a few hundred nodes per step at desk scale),
//! so a flat tape rebuilt every step is enough. Scalars are 1×1 matrices,
//! row vectors are 1×d. Each op stores its parents; `backward` walks the
//! tape in reverse creation order and accumulates vector-Jacobian products.
//!
//! Kinked ops use the inactive-side convention: `relu` and `abs` propagate
//! zero gradient exactly at the kink.

use ndarray::{concatenate, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulTransB(Var, Var),
    SoftmaxRows(Var),
    Tanh(Var),
    NormalizeRows(Var),
    MeanRows(Var),
    SumAll(Var),
    Relu(Var),
    Abs(Var),
    LogSumExpRows(Var),
    Get(Var, usize, usize),
    ConcatRows(Vec<Var>),
    Row(Var, usize),
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[(0, 0)]
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Introduce an input node. Constants and trainable parameters are both
    /// leaves; the caller decides whose gradients it reads back.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = &self.nodes[a.0].value * s;
        self.push(Op::Scale(a, s), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(Op::MatMul(a, b), value)
    }

    /// `a · bᵀ`; the workhorse for logits and cosine similarities.
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        self.push(Op::MatMulTransB(a, b), value)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    /// L2-normalize each row.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        self.push(Op::NormalizeRows(a), value)
    }

    /// Mean over rows: T×d → 1×d.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let t = x.nrows() as f64;
        let value = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / t;
        self.push(Op::MeanRows(a), value)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(Op::SumAll(a), Array2::from_elem((1, 1), s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::abs);
        self.push(Op::Abs(a), value)
    }

    /// Row-wise log-sum-exp with max subtraction: m×n → m×1.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut out = Array2::zeros((x.nrows(), 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            out[(i, 0)] = max + sum.ln();
        }
        self.push(Op::LogSumExpRows(a), out)
    }

    /// Single element as a 1×1 node.
    pub fn get(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = self.nodes[a.0].value[(r, c)];
        self.push(Op::Get(a, r, c), Array2::from_elem((1, 1), v))
    }

    /// Stack inputs vertically. All inputs must share the column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(Op::ConcatRows(parts.to_vec()), value)
    }

    /// One row as a 1×d node.
    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let value = self.nodes[a.0].value.row(r).insert_axis(Axis(0)).to_owned();
        self.push(Op::Row(a, r), value)
    }

    /// Sum of squared entries as a scalar node.
    pub fn squared_norm(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        self.sum_all(sq)
    }

    /// Reverse pass from a scalar node; returns per-node gradients indexed
    /// like the tape. Leaves not on the path to `root` get zero gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.nodes[root.0].value.dim(),
            (1, 1),
            "backward root must be a scalar node"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(grad);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, -grad);
                }
                Op::Mul(a, b) => {
                    let ga = &grad * &self.nodes[b.0].value;
                    let gb = &grad * &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, &grad * *s);
                }
                Op::MatMul(a, b) => {
                    let ga = grad.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&grad);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulTransB(a, b) => {
                    let ga = grad.dot(&self.nodes[b.0].value);
                    let gb = grad.t().dot(&self.nodes[a.0].value);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = &grad * y;
                    for (i, mut row) in gx.rows_mut().into_iter().enumerate() {
                        let dot: f64 = grad.row(i).dot(&y.row(i));
                        let yr = y.row(i);
                        for (j, g) in row.iter_mut().enumerate() {
                            *g -= dot * yr[j];
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let gx = &grad * &y.mapv(|v| 1.0 - v * v);
                    accumulate(&mut grads, *a, gx);
                }
                Op::NormalizeRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let y = &node.value;
                    let mut gx = Array2::zeros(grad.raw_dim());
                    for i in 0..x.nrows() {
                        let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = grad.row(i).dot(&y.row(i));
                        for j in 0..x.ncols() {
                            gx[(i, j)] = (grad[(i, j)] - y[(i, j)] * dot) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::MeanRows(a) => {
                    let t = self.nodes[a.0].value.nrows();
                    let per_row = &grad / t as f64;
                    let mut gx = Array2::zeros(self.nodes[a.0].value.raw_dim());
                    for mut row in gx.rows_mut() {
                        row.assign(&per_row.row(0));
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::SumAll(a) => {
                    let g = grad[(0, 0)];
                    let gx = Array2::from_elem(self.nodes[a.0].value.raw_dim(), g);
                    accumulate(&mut grads, *a, gx);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let gx = ndarray::Zip::from(&grad)
                        .and(x)
                        .map_collect(|&g, &v| if v > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, gx);
                }
                Op::Abs(a) => {
                    let x = &self.nodes[a.0].value;
                    let gx = ndarray::Zip::from(&grad)
                        .and(x)
                        .map_collect(|&g, &v| g * sign_or_zero(v));
                    accumulate(&mut grads, *a, gx);
                }
                Op::LogSumExpRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut gx = Array2::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let row = x.row(i);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        let g = grad[(i, 0)];
                        for j in 0..x.ncols() {
                            gx[(i, j)] = g * (row[j] - max).exp() / sum;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Get(a, r, c) => {
                    let mut gx = Array2::zeros(self.nodes[a.0].value.raw_dim());
                    gx[(*r, *c)] = grad[(0, 0)];
                    accumulate(&mut grads, *a, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.nrows();
                        let slice = grad.slice(ndarray::s![offset..offset + rows, ..]).to_owned();
                        accumulate(&mut grads, *p, slice);
                        offset += rows;
                    }
                }
                Op::Row(a, r) => {
                    let mut gx = Array2::zeros(self.nodes[a.0].value.raw_dim());
                    gx.row_mut(*r).assign(&grad.row(0));
                    accumulate(&mut grads, *a, gx);
                }
            }
        }
        Gradients { grads }
    }
}

fn sign_or_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], var: Var, g: Array2<f64>) {
    match &mut grads[var.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

/// Gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`; zeros if `v` never influenced it.
    pub fn get(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(tape.value(v).raw_dim()))
    }
}
