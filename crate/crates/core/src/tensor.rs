//! Minimal dense-tensor kernel with reverse-mode differentiation.
//!
//! Tensors are 2-D, 64-bit float, and live in an arena owned by a [`Tape`].
//! Every primitive appends a node when gradients are enabled; [`Tape::backward`]
//! walks the arena in reverse. Accumulation orders are fixed so identical
//! inputs give bit-identical outputs across runs.

use crate::error::{Error, Result};

/// Handle into a tape's arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorRef(usize);

impl TensorRef {
    /// Arena position; stable for the lifetime of the owning tape.
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorRef, TensorRef),
    Add(TensorRef, TensorRef),
    Sub(TensorRef, TensorRef),
    Mul(TensorRef, TensorRef),
    AddBias(TensorRef, TensorRef),
    /// y = a*x + b elementwise; only the multiplier is needed for backward
    Affine(TensorRef, f64),
    Sigmoid(TensorRef),
    Tanh(TensorRef),
    Relu(TensorRef),
    Softplus(TensorRef),
    SoftmaxRows(TensorRef),
    LogSoftmaxRows(TensorRef),
    LogSumExpRows(TensorRef),
    ConcatCols(TensorRef, TensorRef),
    GatherRows(TensorRef, Vec<usize>),
    SegmentSum(TensorRef, Vec<usize>),
    MeanRows(TensorRef),
    SumAll(TensorRef),
    Select(TensorRef, usize, usize),
    Log1mExp(TensorRef),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
}

/// Arena of tensors plus the recorded forward trace.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that skips gradient bookkeeping (sampling-only forward passes).
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn shape(&self, t: TensorRef) -> (usize, usize) {
        let n = &self.nodes[t.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, t: TensorRef) -> &[f64] {
        &self.nodes[t.0].value
    }

    pub fn scalar(&self, t: TensorRef) -> f64 {
        debug_assert_eq!(self.nodes[t.0].value.len(), 1);
        self.nodes[t.0].value[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, rg: bool) -> TensorRef {
        debug_assert_eq!(rows * cols, value.len());
        let requires_grad = rg && self.grad_enabled;
        // When grad is off and the node has no dependents to serve, we still
        // keep the arena flat; values are needed downstream anyway.
        self.nodes.push(Node {
            op: if requires_grad { op } else { Op::Leaf },
            rows,
            cols,
            value,
            requires_grad,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn rg(&self, t: TensorRef) -> bool {
        self.nodes[t.0].requires_grad
    }

    fn check_finite(&self, op: &'static str, t: TensorRef) -> Result<TensorRef> {
        if self.nodes[t.0].value.iter().all(|v| v.is_finite()) {
            Ok(t)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Constant (non-differentiable) leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> TensorRef {
        self.push(Op::Leaf, rows, cols, data, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> TensorRef {
        self.constant(1, 1, vec![v])
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> TensorRef {
        self.constant(rows, cols, vec![0.0; rows * cols])
    }

    /// Differentiable leaf (parameter binding).
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> TensorRef {
        self.push(Op::Leaf, rows, cols, data, true)
    }

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{}x{} . {}x{}", m, k, k2, n),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += aip * bv[p * n + j];
                    }
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        let t = self.push(Op::MatMul(a, b), m, n, out, rg);
        self.check_finite("matmul", t)
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: TensorRef,
        b: TensorRef,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorRef> {
        let (m, n) = self.shape(a);
        if self.shape(b) != (m, n) {
            return Err(Error::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let t = self.push(op, m, n, out, rg);
        self.check_finite(name, t)
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast add of a 1xN bias to every row of an MxN matrix.
    pub fn add_bias(&mut self, mat: TensorRef, bias: TensorRef) -> Result<TensorRef> {
        let (m, n) = self.shape(mat);
        if self.shape(bias) != (1, n) {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!("matrix {}x{}, bias {:?}", m, n, self.shape(bias)),
            });
        }
        let mut out = self.nodes[mat.0].value.clone();
        {
            let bv = &self.nodes[bias.0].value;
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] += bv[j];
                }
            }
        }
        let rg = self.rg(mat) || self.rg(bias);
        let t = self.push(Op::AddBias(mat, bias), m, n, out, rg);
        self.check_finite("add_bias", t)
    }

    /// y = a*x + b elementwise with constant a, b.
    pub fn affine(&mut self, x: TensorRef, a: f64, b: f64) -> Result<TensorRef> {
        let (m, n) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| a * v + b).collect();
        let rg = self.rg(x);
        let t = self.push(Op::Affine(x, a), m, n, out, rg);
        self.check_finite("affine", t)
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: TensorRef,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<TensorRef> {
        let (m, n) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        let t = self.push(op, m, n, out, rg);
        self.check_finite(name, t)
    }

    pub fn sigmoid(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary("softplus", x, softplus, Op::Softplus(x))
    }

    /// log(1 - exp(x)) for x < 0, elementwise, stable two-branch form.
    pub fn log1mexp(&mut self, x: TensorRef) -> Result<TensorRef> {
        for &v in &self.nodes[x.0].value {
            if v > 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "log1mexp requires log-probability <= 0, got {}",
                    v
                )));
            }
            if v == 0.0 {
                return Err(Error::ProbabilityMassOne);
            }
        }
        self.unary("log1mexp", x, log1mexp_raw, Op::Log1mExp(x))
    }

    fn rowwise(
        &mut self,
        name: &'static str,
        x: TensorRef,
        op: Op,
        f: impl Fn(&[f64], &mut Vec<f64>),
        out_cols: impl Fn(usize) -> usize,
    ) -> Result<TensorRef> {
        let (m, n) = self.shape(x);
        let oc = out_cols(n);
        let mut out = Vec::with_capacity(m * oc);
        for i in 0..m {
            f(&self.nodes[x.0].value[i * n..(i + 1) * n], &mut out);
        }
        let rg = self.rg(x);
        let t = self.push(op, m, oc, out, rg);
        self.check_finite(name, t)
    }

    pub fn softmax_rows(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.rowwise(
            "softmax_rows",
            x,
            Op::SoftmaxRows(x),
            |row, out| {
                let lse = log_sum_exp(row);
                out.extend(row.iter().map(|&v| (v - lse).exp()));
            },
            |n| n,
        )
    }

    pub fn log_softmax_rows(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.rowwise(
            "log_softmax_rows",
            x,
            Op::LogSoftmaxRows(x),
            |row, out| {
                let lse = log_sum_exp(row);
                out.extend(row.iter().map(|&v| v - lse));
            },
            |n| n,
        )
    }

    /// Row-wise log-sum-exp reduction to an Mx1 column.
    pub fn log_sum_exp_rows(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.rowwise(
            "log_sum_exp_rows",
            x,
            Op::LogSumExpRows(x),
            |row, out| out.push(log_sum_exp(row)),
            |_| 1,
        )
    }

    pub fn concat_cols(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, n1) = self.shape(a);
        let (m2, n2) = self.shape(b);
        if m != m2 {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{} vs {} rows", m, m2),
            });
        }
        let mut out = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            out.extend_from_slice(&self.nodes[a.0].value[i * n1..(i + 1) * n1]);
            out.extend_from_slice(&self.nodes[b.0].value[i * n2..(i + 1) * n2]);
        }
        let rg = self.rg(a) || self.rg(b);
        let t = self.push(Op::ConcatCols(a, b), m, n1 + n2, out, rg);
        self.check_finite("concat_cols", t)
    }

    pub fn gather_rows(&mut self, x: TensorRef, indices: &[usize]) -> Result<TensorRef> {
        let (m, n) = self.shape(x);
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::ShapeMismatch {
                    op: "gather_rows",
                    detail: format!("row {} of {}", i, m),
                });
            }
            out.extend_from_slice(&self.nodes[x.0].value[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        let t = self.push(Op::GatherRows(x, indices.to_vec()), indices.len(), n, out, rg);
        self.check_finite("gather_rows", t)
    }

    /// Scatter-add rows into `n_segments` buckets; rows are accumulated in
    /// ascending row-index order so the result is bit-reproducible.
    pub fn segment_sum(
        &mut self,
        x: TensorRef,
        segments: &[usize],
        n_segments: usize,
    ) -> Result<TensorRef> {
        let (m, n) = self.shape(x);
        if segments.len() != m {
            return Err(Error::ShapeMismatch {
                op: "segment_sum",
                detail: format!("{} segment ids for {} rows", segments.len(), m),
            });
        }
        let mut out = vec![0.0; n_segments * n];
        for (row, &seg) in segments.iter().enumerate() {
            if seg >= n_segments {
                return Err(Error::ShapeMismatch {
                    op: "segment_sum",
                    detail: format!("segment {} of {}", seg, n_segments),
                });
            }
            for j in 0..n {
                out[seg * n + j] += self.nodes[x.0].value[row * n + j];
            }
        }
        let rg = self.rg(x);
        let t = self.push(Op::SegmentSum(x, segments.to_vec()), n_segments, n, out, rg);
        self.check_finite("segment_sum", t)
    }

    /// Column means: MxN -> 1xN.
    pub fn mean_rows(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (m, n) = self.shape(x);
        if m == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                detail: "empty matrix".into(),
            });
        }
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += self.nodes[x.0].value[i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        let rg = self.rg(x);
        let t = self.push(Op::MeanRows(x), 1, n, out, rg);
        self.check_finite("mean_rows", t)
    }

    pub fn sum_all(&mut self, x: TensorRef) -> Result<TensorRef> {
        let total: f64 = self.nodes[x.0].value.iter().sum();
        let rg = self.rg(x);
        let t = self.push(Op::SumAll(x), 1, 1, vec![total], rg);
        self.check_finite("sum_all", t)
    }

    /// Extracts one entry as a 1x1 scalar.
    pub fn select(&mut self, x: TensorRef, row: usize, col: usize) -> Result<TensorRef> {
        let (m, n) = self.shape(x);
        if row >= m || col >= n {
            return Err(Error::ShapeMismatch {
                op: "select",
                detail: format!("({}, {}) of {}x{}", row, col, m, n),
            });
        }
        let v = self.nodes[x.0].value[row * n + col];
        let rg = self.rg(x);
        Ok(self.push(Op::Select(x, row, col), 1, 1, vec![v], rg))
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients, indexed
    /// by arena position; only requires-grad nodes carry Some.
    pub fn backward(&mut self, loss: TensorRef) -> Result<Vec<Option<Vec<f64>>>> {
        if !self.grad_enabled {
            return Err(Error::InvalidArgument(
                "backward on a no-grad tape".into(),
            ));
        }
        let (m, n) = self.shape(loss);
        if (m, n) != (1, 1) {
            return Err(Error::NonScalarLoss(m, n));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                grads[id] = Some(g);
                continue;
            }
            let op = self.nodes[id].op.clone();
            self.accumulate(&op, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn add_grad(&self, grads: &mut Vec<Option<Vec<f64>>>, t: TensorRef, delta: &[f64]) {
        if !self.nodes[t.0].requires_grad {
            return;
        }
        let slot = grads[t.0].get_or_insert_with(|| vec![0.0; self.nodes[t.0].value.len()]);
        for (s, d) in slot.iter_mut().zip(delta) {
            *s += d;
        }
    }

    fn accumulate(&self, op: &Op, id: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let (rows, cols) = (self.nodes[id].rows, self.nodes[id].cols);
        let y = &self.nodes[id].value;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gij * bv[p * n + j];
                            }
                        }
                    }
                    self.add_grad(grads, *a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    self.add_grad(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g);
                self.add_grad(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.add_grad(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let da: Vec<f64> = g.iter().zip(bv).map(|(&gv, &bv)| gv * bv).collect();
                let db: Vec<f64> = g.iter().zip(av).map(|(&gv, &av)| gv * av).collect();
                self.add_grad(grads, *a, &da);
                self.add_grad(grads, *b, &db);
            }
            Op::AddBias(mat, bias) => {
                self.add_grad(grads, *mat, g);
                if self.nodes[bias.0].requires_grad {
                    let mut db = vec![0.0; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            db[j] += g[i * cols + j];
                        }
                    }
                    self.add_grad(grads, *bias, &db);
                }
            }
            Op::Affine(x, a) => {
                let dx: Vec<f64> = g.iter().map(|&v| a * v).collect();
                self.add_grad(grads, *x, &dx);
            }
            Op::Sigmoid(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                    .collect();
                self.add_grad(grads, *x, &dx);
            }
            Op::Tanh(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * (1.0 - yv * yv))
                    .collect();
                self.add_grad(grads, *x, &dx);
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].value;
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.add_grad(grads, *x, &dx);
            }
            Op::Softplus(x) => {
                let xv = &self.nodes[x.0].value;
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| gv * sigmoid(v))
                    .collect();
                self.add_grad(grads, *x, &dx);
            }
            Op::Log1mExp(x) => {
                let xv = &self.nodes[x.0].value;
                // dy/dx = -exp(x - y)
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv.iter().zip(y))
                    .map(|(&gv, (&xv, &yv))| gv * (-(xv - yv).exp()))
                    .collect();
                self.add_grad(grads, *x, &dx);
            }
            Op::SoftmaxRows(x) => {
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    let yr = &y[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..cols {
                        dx[i * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.add_grad(grads, *x, &dx);
            }
            Op::LogSoftmaxRows(x) => {
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    let yr = &y[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..cols {
                        dx[i * cols + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                self.add_grad(grads, *x, &dx);
            }
            Op::LogSumExpRows(x) => {
                let (_, n) = self.shape(*x);
                let xv = &self.nodes[x.0].value;
                let mut dx = vec![0.0; rows * n];
                for i in 0..rows {
                    for j in 0..n {
                        dx[i * n + j] = g[i] * (xv[i * n + j] - y[i]).exp();
                    }
                }
                self.add_grad(grads, *x, &dx);
            }
            Op::ConcatCols(a, b) => {
                let (m, n1) = self.shape(*a);
                let (_, n2) = self.shape(*b);
                let mut da = vec![0.0; m * n1];
                let mut db = vec![0.0; m * n2];
                for i in 0..m {
                    da[i * n1..(i + 1) * n1].copy_from_slice(&g[i * cols..i * cols + n1]);
                    db[i * n2..(i + 1) * n2].copy_from_slice(&g[i * cols + n1..(i + 1) * cols]);
                }
                self.add_grad(grads, *a, &da);
                self.add_grad(grads, *b, &db);
            }
            Op::GatherRows(x, indices) => {
                let (m, n) = self.shape(*x);
                let mut dx = vec![0.0; m * n];
                for (row, &i) in indices.iter().enumerate() {
                    for j in 0..n {
                        dx[i * n + j] += g[row * n + j];
                    }
                }
                self.add_grad(grads, *x, &dx);
            }
            Op::SegmentSum(x, segments) => {
                let (m, n) = self.shape(*x);
                let mut dx = vec![0.0; m * n];
                for (row, &seg) in segments.iter().enumerate() {
                    dx[row * n..(row + 1) * n].copy_from_slice(&g[seg * n..(seg + 1) * n]);
                }
                self.add_grad(grads, *x, &dx);
            }
            Op::MeanRows(x) => {
                let (m, n) = self.shape(*x);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j] / m as f64;
                    }
                }
                self.add_grad(grads, *x, &dx);
            }
            Op::SumAll(x) => {
                let len = self.nodes[x.0].value.len();
                let dx = vec![g[0]; len];
                self.add_grad(grads, *x, &dx);
            }
            Op::Select(x, row, col) => {
                let (_, n) = self.shape(*x);
                let mut dx = vec![0.0; self.nodes[x.0].value.len()];
                dx[row * n + col] = g[0];
                self.add_grad(grads, *x, &dx);
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

fn log1mexp_raw(logp: f64) -> f64 {
    // branch at -ln 2
    if logp < -std::f64::consts::LN_2 {
        (-logp.exp()).ln_1p()
    } else {
        (-logp.exp_m1()).ln()
    }
}

/// Stable log(1 - exp(logp)) for logp < 0.
pub fn log1mexp(logp: f64) -> Result<f64> {
    if logp > 0.0 {
        return Err(Error::InvalidArgument(format!(
            "log1mexp requires log-probability <= 0, got {}",
            logp
        )));
    }
    if logp == 0.0 {
        return Err(Error::ProbabilityMassOne);
    }
    Ok(log1mexp_raw(logp))
}
