//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! replays the record in reverse, accumulating exact gradients for every
//! tracked node. Tapes are single-threaded while recording; the tensors they
//! produce can be moved freely between threads.

use std::rc::Rc;

use crate::tensor::{NumericError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

/// An operation with caller-supplied forward and backward passes.
///
/// `backward` receives the node's inputs, its forward output, and the
/// cotangent flowing into the node; it returns one gradient per input
/// (`None` for inputs that need no gradient).
pub trait CustomOp: std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NumericError>;
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        out_grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, NumericError>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Matmul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(usize, usize),
    SliceRows {
        src: usize,
        start: usize,
        len: usize,
    },
    SliceCols {
        src: usize,
        start: usize,
        len: usize,
    },
    ReduceSum(usize),
    ReduceMean(usize),
    Custom {
        inputs: Vec<usize>,
        op: Rc<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    /// True when a gradient leaf is reachable from this node.
    tracked: bool,
}

/// Append-only record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` is unreachable.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
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
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes[id].tracked
    }

    /// A differentiable input (model parameter).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A non-differentiable input (data, masks, noise draws).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = self.value(a).zip(self.value(b), |x, y| x + y)?;
        let tr = self.tracked(a.0) || self.tracked(b.0);
        Ok(self.push(v, Op::Add(a.0, b.0), tr))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = self.value(a).zip(self.value(b), |x, y| x - y)?;
        let tr = self.tracked(a.0) || self.tracked(b.0);
        Ok(self.push(v, Op::Sub(a.0, b.0), tr))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        let tr = self.tracked(a.0) || self.tracked(b.0);
        Ok(self.push(v, Op::Mul(a.0, b.0), tr))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = self.value(a).matmul(self.value(b))?;
        let tr = self.tracked(a.0) || self.tracked(b.0);
        Ok(self.push(v, Op::Matmul(a.0, b.0), tr))
    }

    /// Add a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var, NumericError> {
        let mat = self.value(m);
        let vec = self.value(v);
        if mat.shape().len() != 2 || vec.shape().len() != 1 || mat.shape()[1] != vec.shape()[0] {
            return Err(NumericError::ShapeMismatch {
                context: "add_row",
                left: mat.shape().to_vec(),
                right: vec.shape().to_vec(),
            });
        }
        let (rows, cols) = (mat.shape()[0], mat.shape()[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(mat.data()[i * cols + j] + vec.data()[j]);
            }
        }
        let out = Tensor::from_vec(vec![rows, cols], data)?;
        let tr = self.tracked(m.0) || self.tracked(v.0);
        Ok(self.push(out, Op::AddRow(m.0, v.0), tr))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let tr = self.tracked(a.0);
        self.push(v, Op::Scale(a.0, c), tr)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let tr = self.tracked(a.0);
        self.push(v, Op::AddScalar(a.0), tr)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(crate::tensor::sigmoid);
        let tr = self.tracked(a.0);
        self.push(v, Op::Sigmoid(a.0), tr)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let tr = self.tracked(a.0);
        self.push(v, Op::Tanh(a.0), tr)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let tr = self.tracked(a.0);
        self.push(v, Op::Exp(a.0), tr)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let tr = self.tracked(a.0);
        self.push(v, Op::Ln(a.0), tr)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let tr = self.tracked(a.0);
        self.push(v, Op::Transpose(a.0), tr)
    }

    /// Stack rank-2 tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let cols = self.value(parts[0]).shape()[1];
        let mut rows = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[1] != cols {
                return Err(NumericError::ShapeMismatch {
                    context: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: s.to_vec(),
                });
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(vec![rows, cols], data)?;
        let tr = parts.iter().any(|p| self.tracked(p.0));
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), tr))
    }

    /// Concatenate two rank-2 tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(NumericError::ShapeMismatch {
                context: "concat_cols",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for i in 0..rows {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let out = Tensor::from_vec(vec![rows, ca + cb], data)?;
        let tr = self.tracked(a.0) || self.tracked(b.0);
        Ok(self.push(out, Op::ConcatCols(a.0, b.0), tr))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericError> {
        let t = self.value(a);
        if t.shape().len() != 2 || start + len > t.shape()[0] {
            return Err(NumericError::ShapeMismatch {
                context: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let cols = t.shape()[1];
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(vec![len, cols], data)?;
        let tr = self.tracked(a.0);
        Ok(self.push(out, Op::SliceRows { src: a.0, start, len }, tr))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericError> {
        let t = self.value(a);
        if t.shape().len() != 2 || start + len > t.shape()[1] {
            return Err(NumericError::ShapeMismatch {
                context: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&t.data()[i * cols + start..i * cols + start + len]);
        }
        let out = Tensor::from_vec(vec![rows, len], data)?;
        let tr = self.tracked(a.0);
        Ok(self.push(out, Op::SliceCols { src: a.0, start, len }, tr))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let tr = self.tracked(a.0);
        self.push(v, Op::ReduceSum(a.0), tr)
    }

    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let tr = self.tracked(a.0);
        self.push(v, Op::ReduceMean(a.0), tr)
    }

    /// Record a caller-defined operation.
    pub fn custom(&mut self, op: Rc<dyn CustomOp>, inputs: &[Var]) -> Result<Var, NumericError> {
        let in_tensors: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&in_tensors)?;
        let tr = inputs.iter().any(|v| self.tracked(v.0));
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.iter().map(|v| v.0).collect(),
                op,
            },
            tr,
        ))
    }

    /// Reverse pass from a scalar loss. Leaves not reachable from the loss
    /// receive a zero gradient (see [`Gradients::wrt`]).
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let loss_t = self.value(loss);
        if loss_t.len() != 1 {
            return Err(NumericError::NonScalarLoss {
                shape: loss_t.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_vec(
            loss_t.shape().to_vec(),
            vec![1.0],
        )?);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].tracked {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: usize, delta: Tensor) {
        if !self.nodes[id].tracked {
            return;
        }
        match &mut grads[id] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(
        &self,
        id: usize,
        g: &Tensor,
        grads: &mut Vec<Option<Tensor>>,
    ) -> Result<(), NumericError> {
        match &self.nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = g.zip(&self.nodes[*b].value, |x, y| x * y)?;
                let gb = g.zip(&self.nodes[*a].value, |x, y| x * y)?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Matmul(a, b) => {
                // c = a·b  =>  ā += ḡ·bᵀ,  b̄ += aᵀ·ḡ
                if self.nodes[*a].tracked {
                    let ga = g.matmul(&self.nodes[*b].value.transpose())?;
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[*b].tracked {
                    let gb = self.nodes[*a].value.transpose().matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(m, v) => {
                self.accumulate(grads, *m, g.clone());
                if self.nodes[*v].tracked {
                    let cols = g.shape()[1];
                    let mut col_sum = vec![0.0; cols];
                    for i in 0..g.shape()[0] {
                        for j in 0..cols {
                            col_sum[j] += g.data()[i * cols + j];
                        }
                    }
                    self.accumulate(grads, *v, Tensor::vector(col_sum));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                let ga = g.zip(y, |gi, yi| gi * yi * (1.0 - yi))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                let ga = g.zip(y, |gi, yi| gi * (1.0 - yi * yi))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let y = &self.nodes[id].value;
                let ga = g.zip(y, |gi, yi| gi * yi)?;
                self.accumulate(grads, *a, ga);
            }
            Op::Ln(a) => {
                let x = &self.nodes[*a].value;
                let ga = g.zip(x, |gi, xi| gi / xi)?;
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose());
            }
            Op::ConcatRows(parts) => {
                let cols = g.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let r = self.nodes[p].value.shape()[0];
                    if self.nodes[p].tracked {
                        let data = g.data()[off * cols..(off + r) * cols].to_vec();
                        self.accumulate(grads, p, Tensor::from_vec(vec![r, cols], data)?);
                    }
                    off += r;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.shape()[1];
                let cb = self.nodes[*b].value.shape()[1];
                let rows = g.shape()[0];
                if self.nodes[*a].tracked {
                    let mut data = Vec::with_capacity(rows * ca);
                    for i in 0..rows {
                        data.extend_from_slice(&g.data()[i * (ca + cb)..i * (ca + cb) + ca]);
                    }
                    self.accumulate(grads, *a, Tensor::from_vec(vec![rows, ca], data)?);
                }
                if self.nodes[*b].tracked {
                    let mut data = Vec::with_capacity(rows * cb);
                    for i in 0..rows {
                        data.extend_from_slice(
                            &g.data()[i * (ca + cb) + ca..(i + 1) * (ca + cb)],
                        );
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(vec![rows, cb], data)?);
                }
            }
            Op::SliceRows { src, start, len } => {
                let parent = &self.nodes[*src].value;
                let cols = parent.shape()[1];
                let mut full = Tensor::zeros(parent.shape());
                full.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
                self.accumulate(grads, *src, full);
            }
            Op::SliceCols { src, start, len } => {
                let parent = &self.nodes[*src].value;
                let (rows, cols) = (parent.shape()[0], parent.shape()[1]);
                let mut full = Tensor::zeros(parent.shape());
                for i in 0..rows {
                    for j in 0..*len {
                        full.data_mut()[i * cols + start + j] = g.data()[i * len + j];
                    }
                }
                self.accumulate(grads, *src, full);
            }
            Op::ReduceSum(a) => {
                let gi = g.scalar_value();
                let shape = self.nodes[*a].value.shape().to_vec();
                self.accumulate(grads, *a, Tensor::filled(&shape, gi));
            }
            Op::ReduceMean(a) => {
                let n = self.nodes[*a].value.len() as f64;
                let gi = g.scalar_value() / n;
                let shape = self.nodes[*a].value.shape().to_vec();
                self.accumulate(grads, *a, Tensor::filled(&shape, gi));
            }
            Op::Custom { inputs, op } => {
                let in_tensors: Vec<&Tensor> =
                    inputs.iter().map(|&i| &self.nodes[i].value).collect();
                let gs = op.backward(&in_tensors, &self.nodes[id].value, g)?;
                debug_assert_eq!(gs.len(), inputs.len());
                for (i, gi) in inputs.iter().zip(gs.into_iter()) {
                    if let Some(gi) = gi {
                        self.accumulate(grads, *i, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // loss = x², x = 3  =>  dloss/dx = 6
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let sq = t.mul(x, x).unwrap();
        let loss = t.reduce_sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(&t, x).scalar_value(), 6.0);
    }

    #[test]
    fn disconnected_leaf_gets_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = t.mul(x, x).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(&t, y), Tensor::zeros(&[2]));
        assert!(g.get(y).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            t.backward(x),
            Err(NumericError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn reduce_sum_example() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = t.reduce_sum(x);
        assert_eq!(t.value(s).scalar_value(), 6.0);
    }

    #[test]
    fn matmul_gradients_match_manual() {
        // loss = sum(A·B): dA = ones·Bᵀ, dB = Aᵀ·ones
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        let loss = t.reduce_sum(c);
        let g = t.backward(loss).unwrap();
        let ga = g.wrt(&t, a);
        // ones(2x2)·Bᵀ = [[11, 15], [11, 15]]
        assert_eq!(ga.data(), &[11.0, 15.0, 11.0, 15.0]);
        let gb = g.wrt(&t, b);
        // Aᵀ·ones = [[4, 4], [6, 6]]
        assert_eq!(gb.data(), &[4.0, 4.0, 6.0, 6.0]);
    }
}
