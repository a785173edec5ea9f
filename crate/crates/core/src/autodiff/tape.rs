use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamId, ParamStore};
use super::{AutodiffError, Tensor};
use crate::math;

/// Negative-side slope of [`Tape::leaky_relu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var),
    Square(Var),
    Reshape(Var),
    RepeatRows(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list of executed operations.
///
/// Values are appended in execution order, so every node's inputs precede it
/// and a single reverse sweep visits each recorded operation once. Nodes whose
/// inputs carry no gradient are stored as constants and skipped by
/// [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: Vec<(Var, Vec<f64>)>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf created by [`Tape::leaf`].
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.leaves.iter().find(|(v, _)| *v == var).map(|(_, g)| g.as_slice())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    /// Adds the parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            for (acc, v) in store.grad_mut(*id).iter_mut().zip(g) {
                *acc += v;
            }
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    /// Drops every node recorded after the first `len`. Vars created after
    /// that point become dangling and must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, op_name: &'static str, value: Tensor, op: Op, rg: bool) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        Ok(self.push(value, op, rg))
    }

    /// Records a constant input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.checked("constant", value, Op::Constant, false)
    }

    /// Records a differentiable input; its gradient is reported by [`Gradients::get`].
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.checked("leaf", value, Op::Leaf, true)
    }

    /// Binds a stored parameter to this tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Binds a stored parameter as a constant (no gradient flows back).
    pub fn param_detached(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        let (a_vals, b_vals) = (av.values(), bv.values());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = a_vals[i * k + p];
                let b_row = &b_vals[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(b_row) {
                    *o += x * y;
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.checked("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg)
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let values: Vec<f64>;
        let shape: Vec<usize>;
        if av.shape() == bv.shape() {
            values = av.values().iter().zip(bv.values()).map(|(&x, &y)| f(x, y)).collect();
            shape = av.shape().to_vec();
        } else if bv.is_scalar() {
            let y = bv.values()[0];
            values = av.values().iter().map(|&x| f(x, y)).collect();
            shape = av.shape().to_vec();
        } else if av.is_scalar() {
            let x = av.values()[0];
            values = bv.values().iter().map(|&y| f(x, y)).collect();
            shape = bv.shape().to_vec();
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: op_name,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.checked(op_name, Tensor::new(shape, values)?, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    fn unary(&mut self, op_name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        let av = &self.nodes[a.0].value;
        let values = av.values().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(av.shape().to_vec(), values)?;
        let rg = self.nodes[a.0].requires_grad;
        self.checked(op_name, t, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        if !c.is_finite() {
            return Err(AutodiffError::NonFinite { op: "scale" });
        }
        self.unary("scale", a, |x| c * x, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("tanh", a, math::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("sigmoid", a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x > 0.0 { x } else { LEAKY_RELU_SLOPE * x },
            Op::LeakyRelu(a),
        )
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.nodes[a.0].value.values().iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.checked("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.values().iter().sum();
        let m = s / v.numel() as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.checked("mean", Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = inputs.first().ok_or(AutodiffError::EmptyInput { op: "concat" })?;
        let base = self.nodes[first.0].value.shape().to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::InvalidAxis { op: "concat", axis });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.nodes[v.0].value.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut values = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let t = &self.nodes[v.0].value;
                let block = t.shape()[axis] * inner;
                values.extend_from_slice(&t.values()[o * block..(o + 1) * block]);
            }
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        self.checked("concat", Tensor::new(shape, values)?, op, rg)
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        if axis >= t.shape().len() {
            return Err(AutodiffError::InvalidAxis { op: "slice", axis });
        }
        if len == 0 || start + len > t.shape()[axis] {
            return Err(AutodiffError::OutOfRange {
                op: "slice",
                start,
                len,
                dim: t.shape()[axis],
            });
        }
        let (outer, dim, inner) = axis_split(t.shape(), axis);
        let mut values = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            values.extend_from_slice(&t.values()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let rg = self.nodes[a.0].requires_grad;
        self.checked(
            "slice",
            Tensor::new(shape, values)?,
            Op::Slice { input: a, axis, start },
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.nodes[a.0].value.clone().reshaped(shape.to_vec())?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Tiles a single row (`[n]` or `[1, n]`) into `rows` identical rows.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        if t.rows() != 1 || rows == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "repeat_rows",
                left: t.shape().to_vec(),
                right: vec![rows, t.cols()],
            });
        }
        let n = t.cols();
        let mut values = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            values.extend_from_slice(t.values());
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Tensor::matrix(rows, n, values)?, Op::RepeatRows(a), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients of shared subexpressions are summed. Nodes that do not depend
    /// on any leaf or parameter contribute nothing.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut out = Gradients::default();
        if !loss_node.requires_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Leaf => out.leaves.push((Var(i), g)),
                Op::Param(id) => out.params.push((*id, g)),
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if self.nodes[a.0].requires_grad {
                        let mut ga = vec![0.0; m * k];
                        for r in 0..m {
                            let g_row = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let b_row = &bv.values()[p * n..(p + 1) * n];
                                ga[r * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut gb = vec![0.0; k * n];
                        for r in 0..m {
                            let g_row = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let x = av.values()[r * k + p];
                                for (acc, y) in gb[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                    *acc += x * y;
                                }
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.push_broadcast(&mut grads, *a, &g, 1.0);
                    self.push_broadcast(&mut grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.push_broadcast(&mut grads, *a, &g, 1.0);
                    self.push_broadcast(&mut grads, *b, &g, -1.0);
                }
                Op::Hadamard(a, b) => {
                    let av = self.nodes[a.0].value.values();
                    let bv = self.nodes[b.0].value.values();
                    let pick = |vals: &[f64], i: usize| if vals.len() == 1 { vals[0] } else { vals[i] };
                    if self.nodes[a.0].requires_grad {
                        let ga: Vec<f64> = g.iter().enumerate().map(|(i, x)| x * pick(bv, i)).collect();
                        self.push_broadcast(&mut grads, *a, &ga, 1.0);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb: Vec<f64> = g.iter().enumerate().map(|(i, x)| x * pick(av, i)).collect();
                        self.push_broadcast(&mut grads, *b, &gb, 1.0);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|x| c * x).collect());
                }
                Op::Concat { inputs, axis } => {
                    let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                    let mut offset = 0;
                    let blocks: Vec<usize> = inputs
                        .iter()
                        .map(|v| self.nodes[v.0].value.shape()[*axis] * inner)
                        .collect();
                    let row_len: usize = blocks.iter().sum();
                    for (v, &block) in inputs.iter().zip(&blocks) {
                        if self.nodes[v.0].requires_grad {
                            let mut gi = Vec::with_capacity(outer * block);
                            for o in 0..outer {
                                let base = o * row_len + offset;
                                gi.extend_from_slice(&g[base..base + block]);
                            }
                            accumulate(&mut grads, *v, gi);
                        }
                        offset += block;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let src = &self.nodes[input.0].value;
                    let (outer, dim, inner) = axis_split(src.shape(), *axis);
                    let len = node.value.shape()[*axis];
                    let mut gi = vec![0.0; src.numel()];
                    for o in 0..outer {
                        let base = o * dim * inner + start * inner;
                        gi[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.numel();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a.0].value.numel();
                    accumulate(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::Tanh(a) => {
                    let y = node.value.values();
                    accumulate(
                        &mut grads,
                        *a,
                        g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    );
                }
                Op::Sigmoid(a) => {
                    let y = node.value.values();
                    accumulate(
                        &mut grads,
                        *a,
                        g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    );
                }
                Op::LeakyRelu(a) => {
                    let x = self.nodes[a.0].value.values();
                    let gi = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { LEAKY_RELU_SLOPE * g })
                        .collect();
                    accumulate(&mut grads, *a, gi);
                }
                Op::Square(a) => {
                    let x = self.nodes[a.0].value.values();
                    accumulate(&mut grads, *a, g.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect());
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, g),
                Op::RepeatRows(a) => {
                    let n = self.nodes[a.0].value.numel();
                    let mut gi = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        for (acc, x) in gi.iter_mut().zip(chunk) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *a, gi);
                }
            }
        }
        out.leaves.reverse();
        out.params.reverse();
        Ok(out)
    }

    /// Pushes `sign * g` to `target`, summing when `target` was broadcast as a scalar.
    fn push_broadcast(&self, grads: &mut [Option<Vec<f64>>], target: Var, g: &[f64], sign: f64) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let n = self.nodes[target.0].value.numel();
        let gi = if n == g.len() {
            g.iter().map(|x| sign * x).collect()
        } else {
            vec![sign * g.iter().sum::<f64>()]
        };
        accumulate(grads, target, gi);
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: Var, g: Vec<f64>) {
    match &mut grads[target.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(&g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
