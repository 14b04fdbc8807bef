//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] is an append-only arena: every operation pushes a node holding
//! its output and the ids of its inputs. Inputs always precede the node that
//! consumes them, so a single reverse sweep over the arena is a valid
//! topological order for [`Tape::backward`].
//!
//! ```
//! use dpa_core::matrix::Matrix;
//! use dpa_core::tape::Tape;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Matrix::from_rows(&[[1.0], [2.0]]).unwrap());
//! let x = tape.leaf(Matrix::from_rows(&[[3.0, 4.0]]).unwrap());
//! let y = tape.matmul(x, w).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(w).data(), &[3.0, 4.0]);
//! ```

use crate::error::{DpaError, Result};
use crate::matrix::{pow_half, Matrix, Trans};

/// Norms below this floor are clamped in the backward rule of
/// [`Tape::row_norm_pow`].
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Mean(NodeId),
    RowNormPow(NodeId, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `id`; nodes the loss does not depend on get zeros.
    pub fn get(&self, id: NodeId) -> Matrix {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Moves the gradient out, leaving nothing behind.
    pub fn take(&mut self, id: NodeId) -> Matrix {
        self.grads[id.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[id.0];
            Matrix::zeros(r, c)
        })
    }
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) => self.needs(*a) || self.needs(*b),
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::Scale(a, _)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Mean(a)
            | Op::RowNormPow(a, _) => self.needs(*a),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    #[inline]
    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Records an input that never receives a gradient (data, noise).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    /// Adds the 1 x c node `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(Op::AddRow(a, row), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&vals)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_rows(&vals)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, end)?;
        Ok(self.push(Op::SliceCols(a, start), v))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_rows(start, end)?;
        Ok(self.push(Op::SliceRows(a, start), v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).mean());
        self.push(Op::Mean(a), v)
    }

    /// Per-row `||x_i||^beta` as a rows x 1 node.
    pub fn row_norm_pow(&mut self, a: NodeId, beta: f64) -> Result<NodeId> {
        let v = crate::matrix::row_norm_pow(self.value(a), beta)?;
        Ok(self.push(Op::RowNormPow(a, beta), v))
    }

    /// Sign pattern of every activation input on the tape. Two tapes built
    /// from the same program have equal patterns iff no pre-activation
    /// crossed a kink between them.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::LeakyRelu(a, _) = node.op {
                out.extend(self.value(a).data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], id: NodeId, g: &Matrix, s: f64) {
        if self.needs(id) {
            accumulate_into(grads, id, g, s);
        }
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(DpaError::Contract(format!(
                "backward needs a 1x1 loss node, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let ga = slot(&mut grads, *a, av.shape());
                        Matrix::gemm_into(1.0, &g, Trans::No, bv, Trans::Yes, 1.0, ga);
                    }
                    if self.needs(*b) {
                        let gb = slot(&mut grads, *b, bv.shape());
                        Matrix::gemm_into(1.0, av, Trans::Yes, &g, Trans::No, 1.0, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, &g, 1.0);
                    self.accumulate(&mut grads, *b, &g, 1.0);
                }
                Op::AddRow(a, row) => {
                    self.accumulate(&mut grads, *a, &g, 1.0);
                    if self.needs(*row) {
                        self.accumulate(&mut grads, *row, &g.col_sums(), 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, &g, 1.0);
                    self.accumulate(&mut grads, *b, &g, -1.0);
                }
                Op::Scale(a, s) => self.accumulate(&mut grads, *a, &g, *s),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.needs(*p) {
                            let piece = g.slice_cols(start, start + w)?;
                            self.accumulate(&mut grads, *p, &piece, 1.0);
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).rows();
                        if self.needs(*p) {
                            let piece = g.slice_rows(start, start + h)?;
                            self.accumulate(&mut grads, *p, &piece, 1.0);
                        }
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let ga = slot(&mut grads, *a, av.shape());
                    let w = g.cols();
                    for i in 0..g.rows() {
                        let dst = &mut ga.row_mut(i)[*start..start + w];
                        for (d, s) in dst.iter_mut().zip(g.row(i)) {
                            *d += s;
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let ga = slot(&mut grads, *a, av.shape());
                    let c = av.cols();
                    let dst = &mut ga.data_mut()[start * c..(start + g.rows()) * c];
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = slot(&mut grads, *a, x.shape());
                    for ((d, s), xv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if *xv > 0.0 {
                            *d += s;
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let ga = slot(&mut grads, *a, x.shape());
                    for ((d, s), xv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *d += if *xv > 0.0 { *s } else { slope * s };
                    }
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let s = g.item()? / x.len().max(1) as f64;
                    let ga = slot(&mut grads, *a, x.shape());
                    ga.data_mut().iter_mut().for_each(|d| *d += s);
                }
                Op::RowNormPow(a, beta) => {
                    let x = self.value(*a);
                    let ga = slot(&mut grads, *a, x.shape());
                    for i in 0..x.rows() {
                        let row = x.row(i);
                        let sq: f64 = row.iter().map(|v| v * v).sum();
                        if sq == 0.0 {
                            continue;
                        }
                        let norm = sq.sqrt().max(NORM_FLOOR);
                        // d/dx ||x||^b = b ||x||^(b-2) x
                        let coef = g.get(i, 0) * beta * pow_half(norm * norm, beta - 2.0);
                        let dst = ga.row_mut(i);
                        for (d, v) in dst.iter_mut().zip(row) {
                            *d += coef * v;
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn slot(grads: &mut [Option<Matrix>], id: NodeId, shape: (usize, usize)) -> &mut Matrix {
    grads[id.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate_into(grads: &mut [Option<Matrix>], id: NodeId, g: &Matrix, s: f64) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (d, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *d += s * v;
            }
        }
        slot @ None => {
            *slot = Some(if s == 1.0 { g.clone() } else { g.scale(s) });
        }
    }
}
