//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! The forward pass records each operation with its output value; `backward`
//! walks the tape in reverse accumulating vector-Jacobian products. Every op also
//! adds its floating-point operation count to [`Tape::flops`].
//!
//! Subgradient conventions: `relu` has derivative 0 at 0, `l1` uses sign(0) = 0 and
//! segment max routes the gradient to the first maximum on ties.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::scan::{scan_backward, scan_forward, ScanInputs};
use crate::tensor::{sigmoid, silu, silu_grad, softplus, Mat, SparseMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors of a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `(x - mean) / sqrt(var + eps)`
    Layer,
    /// `(x - mean) / (std + eps)`
    StdPlusEps,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Softplus(Var),
    Relu(Var),
    RowSoftmax(Var),
    Standardize {
        x: Var,
        kind: NormKind,
        eps: f64,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    Sparse(Arc<SparseMat>, Var),
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ReverseRows(Var),
    Scan {
        u: Var,
        delta: Var,
        a_log: Var,
        b: Var,
        c: Var,
        states: Vec<f64>,
    },
    L1 {
        pred: Var,
        target: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    flops: u64,
}

/// Gradients indexed like the [`ParamStore`] they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Mat>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_ref()))
    }

    /// Elementwise sum; a missing gradient counts as zero.
    pub fn sum(mut self, other: &Gradients) -> Gradients {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
        self
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(s);
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a parameter; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let (n, k) = self.value(a).shape();
        self.flops += 2 * (n * k * value.cols) as u64;
        let ng = self.ng(&[a, b]);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(&[a]);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.flops += value.len() as u64;
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    /// `a + row` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_row_broadcast(self.value(row));
        self.flops += value.len() as u64;
        let ng = self.ng(&[a, row]);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// `a * row` broadcast over rows (elementwise).
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        assert_eq!((rv.rows, rv.cols), (1, av.cols), "mul_row shape mismatch");
        let mut value = av.clone();
        for r in value.data.chunks_mut(av.cols) {
            for (x, g) in r.iter_mut().zip(&rv.data) {
                *x *= g;
            }
        }
        self.flops += value.len() as u64;
        let ng = self.ng(&[a, row]);
        self.push(value, Op::MulRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let value = Mat::from_vec(av.rows, av.cols, data);
        self.flops += value.len() as u64;
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.flops += value.len() as u64;
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(silu);
        self.flops += 4 * value.len() as u64;
        let ng = self.ng(&[a]);
        self.push(value, Op::Silu(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.flops += 3 * value.len() as u64;
        let ng = self.ng(&[a]);
        self.push(value, Op::Softplus(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.flops += value.len() as u64;
        let ng = self.ng(&[a]);
        self.push(value, Op::Relu(a), ng)
    }

    /// Softmax across the components of each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut value = av.clone();
        for r in value.data.chunks_mut(av.cols.max(1)) {
            softmax_in_place(r);
        }
        self.flops += 3 * value.len() as u64;
        let ng = self.ng(&[a]);
        self.push(value, Op::RowSoftmax(a), ng)
    }

    /// Per-row standardization.
    pub fn standardize(&mut self, a: Var, kind: NormKind, eps: f64) -> Var {
        let av = self.value(a);
        let n = av.cols as f64;
        let mut value = av.clone();
        let mut means = Vec::with_capacity(av.rows);
        let mut stds = Vec::with_capacity(av.rows);
        for r in value.data.chunks_mut(av.cols.max(1)) {
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let denom = match kind {
                NormKind::Layer => (var + eps).sqrt(),
                NormKind::StdPlusEps => std + eps,
            };
            r.iter_mut().for_each(|x| *x = (*x - mean) / denom);
            means.push(mean);
            stds.push(std);
        }
        self.flops += 5 * value.len() as u64;
        let ng = self.ng(&[a]);
        self.push(
            value,
            Op::Standardize {
                x: a,
                kind,
                eps,
                mean: means,
                std: stds,
            },
            ng,
        )
    }

    /// `matrix * a` for a fixed sparse matrix.
    pub fn sparse_matmul(&mut self, matrix: Arc<SparseMat>, a: Var) -> Var {
        let value = matrix.matmul(self.value(a));
        self.flops += 2 * (matrix.nnz() * value.cols) as u64;
        let ng = self.ng(&[a]);
        self.push(value, Op::Sparse(matrix, a), ng)
    }

    /// Column-wise max over each row segment; output row `s` reduces rows `segments[s]`.
    pub fn segment_max(&mut self, a: Var, segments: &[Vec<usize>]) -> Var {
        let av = self.value(a);
        let cols = av.cols;
        let mut value = Mat::zeros(segments.len(), cols);
        let mut argmax = vec![0usize; segments.len() * cols];
        let mut flops = 0u64;
        for (s, rows) in segments.iter().enumerate() {
            assert!(!rows.is_empty(), "empty segment {s}");
            for c in 0..cols {
                let mut best = rows[0];
                for &r in &rows[1..] {
                    if av.get(r, c) > av.get(best, c) {
                        best = r;
                    }
                }
                value.set(s, c, av.get(best, c));
                argmax[s * cols + c] = best;
            }
            flops += (rows.len() * cols) as u64;
        }
        self.flops += flops;
        let ng = self.ng(&[a]);
        self.push(value, Op::SegmentMax { x: a, argmax }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut value = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows, rows, "concat_cols row mismatch");
                value.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        let ng = self.ng(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        let ng = self.ng(parts);
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        let value = Mat::from_vec(end - start, av.cols, av.data[start * av.cols..end * av.cols].to_vec());
        let ng = self.ng(&[a]);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    pub fn reverse_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).reverse_rows();
        let ng = self.ng(&[a]);
        self.push(value, Op::ReverseRows(a), ng)
    }

    /// Selective diagonal SSM scan; see [`crate::ssm::scan`].
    pub fn ssm_scan(&mut self, u: Var, delta: Var, a_log: Var, b: Var, c: Var) -> Result<Var> {
        let inputs = ScanInputs {
            u: self.value(u),
            delta: self.value(delta),
            a_log: self.value(a_log),
            b: self.value(b),
            c: self.value(c),
        };
        let (y, states) = scan_forward(&inputs)?;
        let (t, d) = inputs.u.shape();
        self.flops += (6 * t * d * inputs.a_log.cols) as u64;
        let ng = self.ng(&[u, delta, a_log, b, c]);
        Ok(self.push(
            y,
            Op::Scan {
                u,
                delta,
                a_log,
                b,
                c,
                states,
            },
            ng,
        ))
    }

    /// Mean absolute error against a fixed target; a `1 x 1` result.
    pub fn l1(&mut self, pred: Var, target: Mat) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "l1 shape mismatch");
        let n = pv.len().max(1) as f64;
        let loss = pv
            .data
            .iter()
            .zip(&target.data)
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / n;
        self.flops += 3 * pv.len() as u64;
        let ng = self.ng(&[pred]);
        self.push(Mat::filled(1, 1, loss), Op::L1 { pred, target }, ng)
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out: Vec<Option<Mat>> = vec![None; store.len()];
        for &(pid, var) in &self.params {
            if let Some(g) = &grads[var.0] {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for parameter {}",
                        store.name(pid)
                    )));
                }
                match &mut out[pid.0] {
                    Some(acc) => acc.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let acc = |v: Var, delta: Mat, grads: &mut [Option<Mat>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, g.matmul_t(self.value(*b)), grads);
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, self.value(*a).t_matmul(g), grads);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose(), grads),
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone(), grads);
                acc(*row, g.col_sums(), grads);
            }
            Op::MulRow(a, row) => {
                let av = self.value(*a);
                let rv = self.value(*row);
                let mut ga = g.clone();
                let mut gr = Mat::zeros(1, av.cols);
                for r in 0..av.rows {
                    for c in 0..av.cols {
                        let gi = g.get(r, c);
                        ga.set(r, c, gi * rv.data[c]);
                        gr.data[c] += gi * av.get(r, c);
                    }
                }
                acc(*a, ga, grads);
                acc(*row, gr, grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = Mat::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect(),
                );
                let gb = Mat::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect(),
                );
                acc(*a, ga, grads);
                acc(*b, gb, grads);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s), grads),
            Op::Silu(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |gi, xi| gi * silu_grad(xi)), grads);
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |gi, xi| gi * sigmoid(xi)), grads);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }), grads);
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (yi, gi)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yi * (gi - dot);
                    }
                }
                acc(*a, ga, grads);
            }
            Op::Standardize {
                x,
                kind,
                eps,
                mean,
                std,
            } => {
                let xv = self.value(*x);
                let y = &node.value;
                let n = xv.cols as f64;
                let mut gx = Mat::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    let gr = g.row(r);
                    let g_mean = gr.iter().sum::<f64>() / n;
                    match kind {
                        NormKind::Layer => {
                            let d = (std[r] * std[r] + eps).sqrt();
                            let gy: f64 = gr.iter().zip(y.row(r)).map(|(a, b)| a * b).sum::<f64>() / n;
                            for (c, &gc) in gr.iter().enumerate() {
                                gx.set(r, c, (gc - g_mean - y.get(r, c) * gy) / d);
                            }
                        }
                        NormKind::StdPlusEps => {
                            let s = std[r];
                            let d = s + eps;
                            let xr = xv.row(r);
                            let gxc: f64 = gr.iter().zip(xr).map(|(a, xi)| a * (xi - mean[r])).sum();
                            for c in 0..xv.cols {
                                let xc = xr[c] - mean[r];
                                let var_term = if s > 0.0 { gxc / (d * d) * xc / (n * s) } else { 0.0 };
                                gx.set(r, c, (gr[c] - g_mean) / d - var_term);
                            }
                        }
                    }
                }
                acc(*x, gx, grads);
            }
            Op::Sparse(m, a) => acc(*a, m.t_matmul(g), grads),
            Op::SegmentMax { x, argmax } => {
                let xv = self.value(*x);
                let mut gx = Mat::zeros(xv.rows, xv.cols);
                for s in 0..g.rows {
                    for c in 0..g.cols {
                        let r = argmax[s * g.cols + c];
                        gx.data[r * xv.cols + c] += g.get(s, c);
                    }
                }
                acc(*x, gx, grads);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let pc = self.value(*p).cols;
                    let gp = Mat::from_fn(g.rows, pc, |r, c| g.get(r, off + c));
                    off += pc;
                    acc(*p, gp, grads);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let pr = self.value(*p).rows;
                    let gp = Mat::from_vec(pr, g.cols, g.data[off * g.cols..(off + pr) * g.cols].to_vec());
                    off += pr;
                    acc(*p, gp, grads);
                }
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                ga.data[start * av.cols..start * av.cols + g.len()].copy_from_slice(&g.data);
                acc(*a, ga, grads);
            }
            Op::ReverseRows(a) => acc(*a, g.reverse_rows(), grads),
            Op::Scan {
                u,
                delta,
                a_log,
                b,
                c,
                states,
            } => {
                let inputs = ScanInputs {
                    u: self.value(*u),
                    delta: self.value(*delta),
                    a_log: self.value(*a_log),
                    b: self.value(*b),
                    c: self.value(*c),
                };
                let sg = scan_backward(&inputs, states, g);
                acc(*u, sg.u, grads);
                acc(*delta, sg.delta, grads);
                acc(*a_log, sg.a_log, grads);
                acc(*b, sg.b, grads);
                acc(*c, sg.c, grads);
            }
            Op::L1 { pred, target } => {
                let pv = self.value(*pred);
                let n = pv.len().max(1) as f64;
                let s = g.data[0] / n;
                let gp = zip_map(pv, target, |p, t| {
                    let d = p - t;
                    if d > 0.0 {
                        s
                    } else if d < 0.0 {
                        -s
                    } else {
                        0.0
                    }
                });
                acc(*pred, gp, grads);
            }
        }
    }
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    Mat::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    )
}

pub fn softmax_in_place(r: &mut [f64]) {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in r.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    r.iter_mut().for_each(|x| *x /= sum);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of `build` over every scalar of every parameter.
    fn gradcheck(store: &ParamStore, build: impl Fn(&mut Tape, &ParamStore) -> Var) {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store);
        let grads = tape.backward(loss, store).unwrap();
        let h = 1e-5;
        for (pid, name, value) in store.iter() {
            for k in 0..value.len() {
                let mut plus = store.clone();
                plus.get_mut(pid).data[k] += h;
                let mut minus = store.clone();
                minus.get_mut(pid).data[k] -= h;
                let eval = |s: &ParamStore| {
                    let mut t = Tape::new();
                    let l = build(&mut t, s);
                    t.value(l).data[0]
                };
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = grads.get(pid).map_or(0.0, |g| g.data[k]);
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-5, "{name}[{k}]: analytic {an} vs fd {fd}");
            }
        }
    }

    /// Reduces any matrix to a scalar with fixed random weights, so every output
    /// entry gets a distinct upstream gradient.
    fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
        let (r, c) = tape.value(x).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.constant(random(&mut rng, r, c));
        let prod = tape.mul(x, w);
        // l1 against a target far below keeps the sign fixed: loss = mean(prod) + 100
        tape.l1(prod, Mat::filled(r, c, -100.0))
    }

    #[test]
    fn dense_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&mut rng, 4, 3));
        let b = store.add("b", random(&mut rng, 3, 5));
        let bias = store.add("bias", random(&mut rng, 1, 5));
        let gain = store.add("gain", random(&mut rng, 1, 5));
        gradcheck(&store, |t, s| {
            let a = t.param(s, a);
            let b = t.param(s, b);
            let bias = t.param(s, bias);
            let gain = t.param(s, gain);
            let x = t.matmul(a, b);
            let x = t.add_row(x, bias);
            let x = t.mul_row(x, gain);
            let y = t.silu(x);
            let z = t.softplus(y);
            let w = t.row_softmax(z);
            let n1 = t.standardize(x, NormKind::Layer, 1e-5);
            let n2 = t.standardize(y, NormKind::StdPlusEps, 1e-6);
            let sum = t.add(w, n1);
            let sum = t.add(sum, n2);
            let sc = t.scale(sum, 0.7);
            let tr = t.transpose(sc);
            let back = t.transpose(tr);
            weighted_sum(t, back, 9)
        });
    }

    #[test]
    fn structural_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&mut rng, 5, 3));
        let b = store.add("b", random(&mut rng, 2, 3));
        let sparse = Arc::new(SparseMat::from_rows(
            5,
            &[
                vec![(0, 0.5), (2, 0.5)],
                vec![(4, 1.0)],
                vec![(1, 0.2), (3, 0.3), (4, 0.5)],
            ],
        ));
        gradcheck(&store, |t, s| {
            let a = t.param(s, a);
            let b = t.param(s, b);
            let sp = t.sparse_matmul(sparse.clone(), a);
            let mx = t.segment_max(a, &[vec![0, 1, 2], vec![3, 4], vec![4, 0, 2]]);
            let rows = t.concat_rows(&[b, sp, mx]);
            let rev = t.reverse_rows(rows);
            let sl = t.slice_rows(rev, 1, 6);
            let cols = t.concat_cols(&[sl, sl]);
            let r = t.relu(cols);
            let r = t.add(r, cols);
            weighted_sum(t, r, 4)
        });
    }

    #[test]
    fn l1_gradient_is_sign_over_n() {
        let mut store = ParamStore::new();
        let p = store.add("p", Mat::from_vec(1, 4, vec![0.5, -1.0, 2.0, 0.25]));
        let mut t = Tape::new();
        let pv = t.param(&store, p);
        let loss = t.l1(pv, Mat::from_vec(1, 4, vec![0.0, 0.0, 3.0, 0.25]));
        assert!((t.value(loss).data[0] - (0.5 + 1.0 + 1.0) / 4.0).abs() < 1e-15);
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.get(p).unwrap().data, vec![0.25, -0.25, -0.25, 0.0]);
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut store = ParamStore::new();
        let p = store.add("p", Mat::from_vec(1, 1, vec![2.0]));
        let mut t = Tape::new();
        let a = t.param(&store, p);
        let b = t.param(&store, p);
        let s = t.mul(a, b);
        let loss = t.l1(s, Mat::filled(1, 1, 0.0));
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.get(p).unwrap().data[0], 4.0);
    }

    #[test]
    fn flops_are_counted() {
        let mut t = Tape::new();
        let a = t.constant(Mat::zeros(3, 4));
        let b = t.constant(Mat::zeros(4, 5));
        t.matmul(a, b);
        assert_eq!(t.flops(), 2 * 3 * 4 * 5);
    }
}
