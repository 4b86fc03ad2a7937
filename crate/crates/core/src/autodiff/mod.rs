//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a dynamic tape: every operation appends a node holding its
//! forward value, and [`Graph::backward`] walks the nodes in exact reverse
//! insertion order. Leaves created with [`Graph::param`] are linked to a
//! [`ParamStore`] so their gradients can be copied back after the pass.
//!
//! Binary elementwise ops accept either identical shapes or a right operand
//! whose trailing axes are 1 (e.g. `[T, 1]` against `[T, d]`). Row-vector
//! bias addition has its own op, [`Graph::add_row`].

mod gradcheck;
mod params;

pub use gradcheck::{gradcheck, gradcheck_params, gradcheck_params_by_name, gradcheck_with_step, DEFAULT_STEP};
pub use params::{ParamId, ParamStore};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Relu,
}

impl Elementwise {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Elementwise, Var, Var, usize),
    Unary(Elementwise, Var),
    Affine(Var, f64),
    AddRow(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Reduce(Reduce, Var, usize),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Pick(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// The recording tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    check_finite: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// With checks on, any op that produces NaN/Inf fails with [`Error::NonFinite`].
    pub fn with_finite_checks(check: bool) -> Self {
        Self {
            check_finite: check,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.input(tensor.with_requires_grad(false))
    }

    /// Leaf copied from a parameter store; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return *v;
        }
        let src = store.get(id);
        let value = src.detached().with_requires_grad(src.requires_grad());
        let var = self.input(value);
        self.nodes[var.0].param = Some(id);
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(var);
        var
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Adds the gradients of every parameter leaf into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.value.grad()) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value: value.with_requires_grad(rg),
            op,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("cannot multiply {:?} by {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", a)?;
        let out = transpose_kernel(self.value(a).data(), r, c);
        self.push("transpose", Tensor::matrix(c, r, out)?, Op::Transpose(a), &[a])
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => self.unary(kind, a),
            (true, None) => Err(shape_err("elementwise", format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(shape_err("elementwise", format!("{kind:?} takes one operand"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Log, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Relu, a)
    }

    fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var> {
        let block = broadcast_block(self.shape(a), self.shape(b)).ok_or_else(|| {
            shape_err(
                "elementwise",
                format!("{kind:?}: shapes {:?} and {:?} do not match", self.shape(a), self.shape(b)),
            )
        })?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let f: fn(f64, f64) -> f64 = match kind {
            Elementwise::Add => |x, y| x + y,
            Elementwise::Sub => |x, y| x - y,
            Elementwise::Mul => |x, y| x * y,
            _ => unreachable!(),
        };
        let out: Vec<f64> = av.iter().enumerate().map(|(i, &x)| f(x, bv[i / block])).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("elementwise", value, Op::Binary(kind, a, b, block), &[a, b])
    }

    fn unary(&mut self, kind: Elementwise, a: Var) -> Result<Var> {
        let av = self.value(a).data();
        let out: Vec<f64> = match kind {
            Elementwise::Sigmoid => av.iter().map(|&x| sigmoid(x)).collect(),
            Elementwise::Tanh => av.iter().map(|x| x.tanh()).collect(),
            Elementwise::Exp => av.iter().map(|x| x.exp()).collect(),
            Elementwise::Relu => av.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
            Elementwise::Log => {
                if let Some(bad) = av.iter().find(|&&x| !(x > 0.0)) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                av.iter().map(|x| x.ln()).collect()
            }
            _ => unreachable!(),
        };
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("elementwise", value, Op::Unary(kind, a), &[a])
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(a).data().iter().map(|&x| scale * x + shift).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("affine", value, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.affine(a, factor, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 1.0)
    }

    /// Adds a rank-1 `bias` of length `n` to every row of `x[..., n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(bias) != [n] {
            return Err(shape_err(
                "add_row",
                format!("bias {:?} does not fit rows of {:?}", self.shape(bias), self.shape(x)),
            ));
        }
        let bv = self.value(bias).data();
        let out = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % n])
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("add_row", value, Op::AddRow(x, bias), &[x, bias])
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(n) {
            softmax_into(row, &mut out);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax", value, Op::Softmax(a), &[a])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("log_softmax", value, Op::LogSoftmax(a), &[a])
    }

    /// Sum or mean along `axis`; the axis is removed (rank-1 inputs give shape `[1]`).
    pub fn reduce(&mut self, kind: Reduce, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(shape_err(
                "reduce",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for j in 0..inner {
                    out[o * inner + j] += src[base + j];
                }
            }
        }
        if kind == Reduce::Mean {
            let inv = n as f64;
            out.iter_mut().for_each(|v| *v /= inv);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(out_shape, out)?;
        self.push("reduce", value, Op::Reduce(kind, a, axis), &[a])
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Mean, a, axis)
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[n])?;
        self.sum(flat, 0)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape).map_err(|_| {
            shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(a)),
            )
        })?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "nothing to concatenate"))?;
        let (rows, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != rows {
                return Err(shape_err(
                    "concat_cols",
                    format!("row count {r} differs from {rows}"),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::matrix(rows, total, out)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", "nothing to concatenate"))?;
        let (_, cols) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != cols {
                return Err(shape_err(
                    "concat_rows",
                    format!("column count {c} differs from {cols}"),
                ));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, cols, out)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("slice_cols", a)?;
        if len == 0 || start + len > cols {
            return Err(shape_err(
                "slice_cols",
                format!("columns {start}..{} out of range for {cols}", start + len),
            ));
        }
        let src = self.value(a);
        let out = (0..rows)
            .flat_map(|i| src.row(i)[start..start + len].iter().copied())
            .collect();
        let value = Tensor::matrix(rows, len, out)?;
        self.push("slice_cols", value, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("slice_rows", a)?;
        if len == 0 || start + len > rows {
            return Err(shape_err(
                "slice_rows",
                format!("rows {start}..{} out of range for {rows}", start + len),
            ));
        }
        let out = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::matrix(len, cols, out)?;
        self.push("slice_rows", value, Op::SliceRows(a, start), &[a])
    }

    /// Row lookup `table[ids[i]]`, shape `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2("gather_rows", table)?;
        if ids.is_empty() {
            return Err(shape_err("gather_rows", "empty index list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(shape_err(
                "gather_rows",
                format!("index {bad} out of range for table with {rows} rows"),
            ));
        }
        let src = self.value(table);
        let out = ids.iter().flat_map(|&i| src.row(i).iter().copied()).collect();
        let value = Tensor::matrix(ids.len(), cols, out)?;
        self.push("gather_rows", value, Op::GatherRows(table, ids.to_vec()), &[table])
    }

    /// Standardizes the last axis then applies `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.shape(gain) != [d] || self.shape(shift) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "gain {:?}/shift {:?} do not match width {d}",
                    self.shape(gain),
                    self.shape(shift)
                ),
            ));
        }
        let xv = self.value(x);
        let gv = self.value(gain).data();
        let sv = self.value(shift).data();
        let mut out = Vec::with_capacity(xv.len());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows());
        for row in xv.data().chunks(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mu) * r;
                xhat.push(xh);
                out.push(xh * gv[j] + sv[j]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            shift,
            xhat,
            rstd,
        };
        self.push("layer_norm", value, op, &[x, gain, shift])
    }

    /// Element `index` of the flattened tensor, shape `[1]`.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if index >= t.len() {
            return Err(shape_err(
                "pick",
                format!("index {index} out of range for {:?}", t.shape()),
            ));
        }
        let value = Tensor::scalar(t.data()[index]);
        self.push("pick", value, Op::Pick(a, index), &[a])
    }

    /// Propagates d(loss)/d(node) back to every leaf that requires a gradient.
    ///
    /// Leaf gradients accumulate, so running backward twice without
    /// [`Graph::zero_grad`] doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.shape(*a));
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let bt = transpose_kernel(self.value(*b).data(), k, n);
                    let da = matmul_kernel(g, &bt, m, n, k);
                    add_into(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let at = transpose_kernel(self.value(*a).data(), m, k);
                    let db = matmul_kernel(&at, g, k, m, n);
                    add_into(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = dims(self.shape(*a));
                add_into(grads, *a, &transpose_kernel(g, c, r));
            }
            Op::Binary(kind, a, b, block) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let block = *block;
                if self.requires_grad(*a) {
                    let da: Vec<f64> = match kind {
                        Elementwise::Mul => g.iter().enumerate().map(|(j, gj)| gj * bv[j / block]).collect(),
                        _ => g.to_vec(),
                    };
                    add_into(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; bv.len()];
                    for (j, gj) in g.iter().enumerate() {
                        db[j / block] += match kind {
                            Elementwise::Add => *gj,
                            Elementwise::Sub => -gj,
                            _ => gj * av[j],
                        };
                    }
                    add_into(grads, *b, &db);
                }
            }
            Op::Unary(kind, a) => {
                let av = self.value(*a).data();
                let da: Vec<f64> = match kind {
                    Elementwise::Sigmoid => g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Elementwise::Tanh => g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Elementwise::Exp => g.iter().zip(out).map(|(g, y)| g * y).collect(),
                    Elementwise::Log => g.iter().zip(av).map(|(g, x)| g / x).collect(),
                    Elementwise::Relu => g
                        .iter()
                        .zip(av)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    _ => unreachable!(),
                };
                add_into(grads, *a, &da);
            }
            Op::Affine(a, scale) => {
                let da: Vec<f64> = g.iter().map(|v| v * scale).collect();
                add_into(grads, *a, &da);
            }
            Op::AddRow(x, bias) => {
                if self.requires_grad(*x) {
                    add_into(grads, *x, g);
                }
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for (j, gj) in g.iter().enumerate() {
                        db[j % n] += gj;
                    }
                    add_into(grads, *bias, &db);
                }
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                let mut da = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(out.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    da.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                add_into(grads, *a, &da);
            }
            Op::LogSoftmax(a) => {
                let n = node.value.cols();
                let mut da = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(out.chunks(n)) {
                    let total: f64 = gr.iter().sum();
                    da.extend(gr.iter().zip(yr).map(|(g, y)| g - y.exp() * total));
                }
                add_into(grads, *a, &da);
            }
            Op::Reduce(kind, a, axis) => {
                let (outer, n, inner) = split_axis(self.shape(*a), *axis);
                let factor = match kind {
                    Reduce::Sum => 1.0,
                    Reduce::Mean => 1.0 / n as f64,
                };
                let mut da = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        for j in 0..inner {
                            da[base + j] = g[o * inner + j] * factor;
                        }
                    }
                }
                add_into(grads, *a, &da);
            }
            Op::Reshape(a) => add_into(grads, *a, g),
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let dp: Vec<f64> = (0..rows)
                            .flat_map(|r| g[r * total + offset..r * total + offset + w].iter().copied())
                            .collect();
                        add_into(grads, p, &dp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        add_into(grads, p, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = dims(self.shape(*a));
                let w = node.value.cols();
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    da[r * cols + start..r * cols + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                add_into(grads, *a, &da);
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = dims(self.shape(*a));
                let mut da = vec![0.0; rows * cols];
                da[start * cols..start * cols + g.len()].copy_from_slice(g);
                add_into(grads, *a, &da);
            }
            Op::GatherRows(table, ids) => {
                let (rows, cols) = dims(self.shape(*table));
                let mut dt = vec![0.0; rows * cols];
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..cols {
                        dt[id * cols + j] += g[k * cols + j];
                    }
                }
                add_into(grads, *table, &dt);
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            } => {
                let d = self.value(*gain).len();
                let gv = self.value(*gain).data();
                if self.requires_grad(*gain) {
                    let mut dg = vec![0.0; d];
                    for (j, (gj, xh)) in g.iter().zip(xhat).enumerate() {
                        dg[j % d] += gj * xh;
                    }
                    add_into(grads, *gain, &dg);
                }
                if self.requires_grad(*shift) {
                    let mut ds = vec![0.0; d];
                    for (j, gj) in g.iter().enumerate() {
                        ds[j % d] += gj;
                    }
                    add_into(grads, *shift, &ds);
                }
                if self.requires_grad(*x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((gr, xr), r) in g.chunks(d).zip(xhat.chunks(d)).zip(rstd) {
                        let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(g, w)| g * w).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        dx.extend(
                            dxhat
                                .iter()
                                .zip(xr)
                                .map(|(dh, xh)| r * (dh - mean_d - xh * mean_dx)),
                        );
                    }
                    add_into(grads, *x, &dx);
                }
            }
            Op::Pick(a, index) => {
                let mut da = vec![0.0; self.value(*a).len()];
                da[*index] = g[0];
                add_into(grads, *a, &da);
            }
        }
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn dims(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Element block size that maps `a`'s flat index onto `b`'s, if `b` broadcasts.
fn broadcast_block(a: &[usize], b: &[usize]) -> Option<usize> {
    if a == b {
        return Some(1);
    }
    if a.len() != b.len() {
        return None;
    }
    let split = b.iter().rposition(|&s| s != 1).map_or(0, |p| p + 1);
    if a[..split] != b[..split] {
        return None;
    }
    Some(a[split..].iter().product())
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_into(row: &[f64], out: &mut Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    out.extend(row.iter().map(|x| (x - max).exp()));
    let total: f64 = out[start..].iter().sum();
    out[start..].iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_kernel(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

#[cfg(test)]
mod tests;
