//! Reverse-mode autodiff over dense matrices.
//!
//! Operations are recorded onto a [`Tape`] as they are evaluated; calling
//! [`Tape::backward`] on a scalar output replays the records in reverse and
//! accumulates gradients for every tensor created with `requires_grad`.
//! Every op checks its output for NaN/Inf and fails fast on non-finite values.

use std::rc::Rc;

use crate::error::{HecoError, Result};
use crate::tensor::matrix::Matrix;

/// Handle to a tensor living on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Row-compressed sparse matrix with a precomputed transpose, used for the
/// fixed normalized adjacencies of the meta-path GCN.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    fw: Vec<Vec<(u32, f64)>>,
    bw: Vec<Vec<(u32, f64)>>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut fw = vec![Vec::new(); rows];
        let mut bw = vec![Vec::new(); cols];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(HecoError::Shape {
                    op: "sparse_from_triplets",
                    detail: format!("entry ({}, {}) outside {}x{}", r, c, rows, cols),
                });
            }
            fw[r].push((c as u32, v));
            bw[c].push((r as u32, v));
        }
        Ok(SparseMatrix { rows, cols, fw, bw })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// self @ dense
    fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if self.cols != m.rows() {
            return Err(HecoError::Shape {
                op: "sparse_matmul",
                detail: format!("{}x{} @ {:?}", self.rows, self.cols, m.shape()),
            });
        }
        let d = m.cols();
        let mut out = Matrix::zeros(self.rows, d);
        for (i, row) in self.fw.iter().enumerate() {
            let out_row = out.row_mut(i);
            for &(j, v) in row {
                let src = m.row(j as usize);
                for k in 0..d {
                    out_row[k] += v * src[k];
                }
            }
        }
        Ok(out)
    }

    /// self^T @ dense (used by the backward pass).
    fn apply_transpose(&self, m: &Matrix) -> Result<Matrix> {
        if self.rows != m.rows() {
            return Err(HecoError::Shape {
                op: "sparse_matmul_t",
                detail: format!("{}x{} ^T @ {:?}", self.rows, self.cols, m.shape()),
            });
        }
        let d = m.cols();
        let mut out = Matrix::zeros(self.cols, d);
        for (j, row) in self.bw.iter().enumerate() {
            let out_row = out.row_mut(j);
            for &(i, v) in row {
                let src = m.row(i as usize);
                for k in 0..d {
                    out_row[k] += v * src[k];
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    SparseMatMul(Rc<SparseMatrix>, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    AddRowBroadcast(TensorId, TensorId),
    AddColBroadcast(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MulColBroadcast(TensorId, TensorId),
    MulScalar(TensorId, TensorId),
    Scale(TensorId, f64),
    ConcatCols(TensorId, TensorId),
    ConcatRows(TensorId, TensorId),
    Elu(TensorId),
    Tanh(TensorId),
    LeakyRelu(TensorId, f64),
    Exp(TensorId),
    Log(TensorId),
    Sigmoid(TensorId),
    Softplus(TensorId),
    Recip(TensorId),
    RowSoftmax(TensorId),
    RowL2Normalize(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    RowSum(TensorId),
    GatherRows(TensorId, Rc<Vec<usize>>),
    ScatterAddRows(TensorId, Rc<Vec<usize>>),
    Cell(TensorId, usize, usize),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`TensorId`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a tensor, with unreachable tensors reported as zeros.
    pub fn get_or_zeros(&self, id: TensorId, shape: (usize, usize)) -> Matrix {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Matrix::zeros(shape.0, shape.1),
        }
    }
}

/// The op recorder. Forward values are computed eagerly as ops are recorded,
/// so intermediate values can be inspected while the graph is still being built.
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: TensorId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, requires_grad: bool) -> Result<TensorId> {
        if !value.all_finite() {
            return Err(HecoError::Numeric { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn needs(&self, a: TensorId) -> bool {
        self.nodes[a.0].requires_grad
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<TensorId> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Result<TensorId> {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Result<TensorId> {
        self.constant(Matrix::scalar(v))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        self.push("matmul", value, Op::MatMul(a, b), rg)
    }

    pub fn sparse_matmul(&mut self, a: Rc<SparseMatrix>, b: TensorId) -> Result<TensorId> {
        let value = a.apply(self.value(b))?;
        let rg = self.needs(b);
        self.push("sparse_matmul", value, Op::SparseMatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.value(a).transpose();
        let rg = self.needs(a);
        self.push("transpose", value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        self.push("add", value, Op::Add(a, b), rg)
    }

    /// a (n x d) + bias (1 x d), broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(HecoError::Shape {
                op: "add_row_broadcast",
                detail: format!("{:?} + {:?}", av.shape(), bv.shape()),
            });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            for (c, x) in row.iter_mut().enumerate() {
                *x += bv.get(0, c);
            }
        }
        let rg = self.needs(a) || self.needs(bias);
        self.push("add_row_broadcast", value, Op::AddRowBroadcast(a, bias), rg)
    }

    /// a (n x d) + col (n x 1), broadcast over columns.
    pub fn add_col_broadcast(&mut self, a: TensorId, col: TensorId) -> Result<TensorId> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(HecoError::Shape {
                op: "add_col_broadcast",
                detail: format!("{:?} + {:?}", av.shape(), cv.shape()),
            });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let add = cv.get(r, 0);
            for x in value.row_mut(r) {
                *x += add;
            }
        }
        let rg = self.needs(a) || self.needs(col);
        self.push("add_col_broadcast", value, Op::AddColBroadcast(a, col), rg)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.value(a).mul_elem(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        self.push("mul", value, Op::Mul(a, b), rg)
    }

    /// a (n x d) * col (n x 1), broadcast over columns.
    pub fn mul_col_broadcast(&mut self, a: TensorId, col: TensorId) -> Result<TensorId> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(HecoError::Shape {
                op: "mul_col_broadcast",
                detail: format!("{:?} * {:?}", av.shape(), cv.shape()),
            });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let k = cv.get(r, 0);
            for x in value.row_mut(r) {
                *x *= k;
            }
        }
        let rg = self.needs(a) || self.needs(col);
        self.push("mul_col_broadcast", value, Op::MulColBroadcast(a, col), rg)
    }

    /// a * s where s is a 1x1 tensor (both differentiable).
    pub fn mul_scalar(&mut self, a: TensorId, s: TensorId) -> Result<TensorId> {
        let sv = self.value(s).scalar_value()?;
        let value = self.value(a).scale(sv);
        let rg = self.needs(a) || self.needs(s);
        self.push("mul_scalar", value, Op::MulScalar(a, s), rg)
    }

    /// a * k for a compile-time constant k.
    pub fn scale(&mut self, a: TensorId, k: f64) -> Result<TensorId> {
        let value = self.value(a).scale(k);
        let rg = self.needs(a);
        self.push("scale", value, Op::Scale(a, k), rg)
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(HecoError::Shape {
                op: "concat_cols",
                detail: format!("{:?} || {:?}", av.shape(), bv.shape()),
            });
        }
        let (n, c1, c2) = (av.rows(), av.cols(), bv.cols());
        let mut value = Matrix::zeros(n, c1 + c2);
        for r in 0..n {
            value.row_mut(r)[..c1].copy_from_slice(av.row(r));
            value.row_mut(r)[c1..].copy_from_slice(bv.row(r));
        }
        let rg = self.needs(a) || self.needs(b);
        self.push("concat_cols", value, Op::ConcatCols(a, b), rg)
    }

    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(HecoError::Shape {
                op: "concat_rows",
                detail: format!("{:?} ; {:?}", av.shape(), bv.shape()),
            });
        }
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.as_slice());
        data.extend_from_slice(bv.as_slice());
        let value = Matrix::from_vec(av.rows() + bv.rows(), av.cols(), data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push("concat_rows", value, Op::ConcatRows(a, b), rg)
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: TensorId,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<TensorId> {
        let value = self.value(a).map(f);
        let rg = self.needs(a);
        self.push(name, value, op, rg)
    }

    pub fn elu(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("elu", a, Op::Elu(a), |x| if x > 0.0 { x } else { x.exp() - 1.0 })
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> Result<TensorId> {
        self.unary("leaky_relu", a, Op::LeakyRelu(a, slope), |x| {
            if x >= 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("softplus", a, Op::Softplus(a), |x| {
            x.max(0.0) + (-x.abs()).exp().ln_1p()
        })
    }

    pub fn recip(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("recip", a, Op::Recip(a), |x| 1.0 / x)
    }

    /// Numerically stable softmax along each row (max subtraction).
    pub fn row_softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let av = self.value(a);
        let mut value = av.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let rg = self.needs(a);
        self.push("row_softmax", value, Op::RowSoftmax(a), rg)
    }

    /// L2-normalize each row; all-zero rows map to zero.
    pub fn row_l2_normalize(&mut self, a: TensorId) -> Result<TensorId> {
        let av = self.value(a);
        let mut value = av.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in row.iter_mut() {
                    *x /= norm;
                }
            }
        }
        let rg = self.needs(a);
        self.push("row_l2_normalize", value, Op::RowL2Normalize(a), rg)
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push("sum", value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let av = self.value(a);
        let value = Matrix::scalar(av.sum() / av.len() as f64);
        let rg = self.needs(a);
        self.push("mean", value, Op::Mean(a), rg)
    }

    pub fn row_sum(&mut self, a: TensorId) -> Result<TensorId> {
        let av = self.value(a);
        let value = Matrix::column((0..av.rows()).map(|r| av.row(r).iter().sum()).collect());
        let rg = self.needs(a);
        self.push("row_sum", value, Op::RowSum(a), rg)
    }

    /// `y[r, :] = a[idx[r], :]`
    pub fn gather_rows(&mut self, a: TensorId, idx: Rc<Vec<usize>>) -> Result<TensorId> {
        let av = self.value(a);
        let mut value = Matrix::zeros(idx.len(), av.cols());
        for (r, &src) in idx.iter().enumerate() {
            if src >= av.rows() {
                return Err(HecoError::Shape {
                    op: "gather_rows",
                    detail: format!("row {} out of {}", src, av.rows()),
                });
            }
            value.row_mut(r).copy_from_slice(av.row(src));
        }
        let rg = self.needs(a);
        self.push("gather_rows", value, Op::GatherRows(a, idx), rg)
    }

    /// y has out_rows rows; `y[idx[r], :] += a[r, :]`
    pub fn scatter_add_rows(&mut self, a: TensorId, idx: Rc<Vec<usize>>, out_rows: usize) -> Result<TensorId> {
        let av = self.value(a);
        if idx.len() != av.rows() {
            return Err(HecoError::Shape {
                op: "scatter_add_rows",
                detail: format!("{} indices for {} rows", idx.len(), av.rows()),
            });
        }
        let mut value = Matrix::zeros(out_rows, av.cols());
        for (r, &dst) in idx.iter().enumerate() {
            if dst >= out_rows {
                return Err(HecoError::Shape {
                    op: "scatter_add_rows",
                    detail: format!("target row {} out of {}", dst, out_rows),
                });
            }
            let src = av.row(r);
            let out = value.row_mut(dst);
            for c in 0..src.len() {
                out[c] += src[c];
            }
        }
        let rg = self.needs(a);
        self.push("scatter_add_rows", value, Op::ScatterAddRows(a, idx), rg)
    }

    /// Extract a single entry as a 1x1 tensor.
    pub fn cell(&mut self, a: TensorId, r: usize, c: usize) -> Result<TensorId> {
        let av = self.value(a);
        if r >= av.rows() || c >= av.cols() {
            return Err(HecoError::Shape {
                op: "cell",
                detail: format!("({}, {}) out of {:?}", r, c, av.shape()),
            });
        }
        let value = Matrix::scalar(av.get(r, c));
        let rg = self.needs(a);
        self.push("cell", value, Op::Cell(a, r, c), rg)
    }

    /// Elementwise multiply by a fixed dropout mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, a: TensorId, mask: &Matrix) -> Result<TensorId> {
        let m = self.constant(mask.clone())?;
        self.mul(a, m)
    }

    /// a - b.
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Gradients of a scalar loss w.r.t. every `requires_grad` tensor.
    /// Tensors the loss does not depend on report no gradient (treated as zero).
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.shape() != (1, 1) {
            return Err(HecoError::Contract(format!(
                "backward requires a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
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

    fn accumulate(&self, grads: &mut [Option<Matrix>], id: TensorId, delta: Matrix) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let bt = self.value(*b).transpose();
                    self.accumulate(grads, *a, g.matmul(&bt)?)?;
                }
                if self.needs(*b) {
                    let at = self.value(*a).transpose();
                    self.accumulate(grads, *b, at.matmul(g)?)?;
                }
            }
            Op::SparseMatMul(s, b) => {
                if self.needs(*b) {
                    self.accumulate(grads, *b, s.apply_transpose(g)?)?;
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose())?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::AddRowBroadcast(a, bias) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.needs(*bias) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gb.set(0, c, gb.get(0, c) + g.get(r, c));
                        }
                    }
                    self.accumulate(grads, *bias, gb)?;
                }
            }
            Op::AddColBroadcast(a, col) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.needs(*col) {
                    let gc = Matrix::column((0..g.rows()).map(|r| g.row(r).iter().sum()).collect());
                    self.accumulate(grads, *col, gc)?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.mul_elem(self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.mul_elem(self.value(*a))?)?;
                }
            }
            Op::MulColBroadcast(a, col) => {
                let (av, cv) = (self.value(*a), self.value(*col));
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let k = cv.get(r, 0);
                        for x in ga.row_mut(r) {
                            *x *= k;
                        }
                    }
                    self.accumulate(grads, *a, ga)?;
                }
                if self.needs(*col) {
                    let gc = Matrix::column(
                        (0..g.rows())
                            .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                            .collect(),
                    );
                    self.accumulate(grads, *col, gc)?;
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).get(0, 0);
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.scale(sv))?;
                }
                if self.needs(*s) {
                    let gs = g.mul_elem(self.value(*a))?.sum();
                    self.accumulate(grads, *s, Matrix::scalar(gs))?;
                }
            }
            Op::Scale(a, k) => {
                self.accumulate(grads, *a, g.scale(*k))?;
            }
            Op::ConcatCols(a, b) => {
                let c1 = self.value(*a).cols();
                if self.needs(*a) {
                    let mut ga = Matrix::zeros(g.rows(), c1);
                    for r in 0..g.rows() {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..c1]);
                    }
                    self.accumulate(grads, *a, ga)?;
                }
                if self.needs(*b) {
                    let c2 = g.cols() - c1;
                    let mut gb = Matrix::zeros(g.rows(), c2);
                    for r in 0..g.rows() {
                        gb.row_mut(r).copy_from_slice(&g.row(r)[c1..]);
                    }
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::ConcatRows(a, b) => {
                let r1 = self.value(*a).rows();
                if self.needs(*a) {
                    let ga = Matrix::from_vec(r1, g.cols(), g.as_slice()[..r1 * g.cols()].to_vec())?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.needs(*b) {
                    let r2 = g.rows() - r1;
                    let gb = Matrix::from_vec(r2, g.cols(), g.as_slice()[r1 * g.cols()..].to_vec())?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Elu(a) => {
                let (x, y) = (self.value(*a), &node.value);
                let ga = grad_zip(g, x, y, |g, x, y| if x > 0.0 { g } else { g * (y + 1.0) });
                self.accumulate(grads, *a, ga)?;
            }
            Op::Tanh(a) => {
                let ga = grad_zip(g, &node.value, &node.value, |g, y, _| g * (1.0 - y * y));
                self.accumulate(grads, *a, ga)?;
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let s = *slope;
                let ga = grad_zip(g, x, x, move |g, x, _| if x >= 0.0 { g } else { g * s });
                self.accumulate(grads, *a, ga)?;
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, g.mul_elem(&node.value)?)?;
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let ga = grad_zip(g, x, x, |g, x, _| g / x);
                self.accumulate(grads, *a, ga)?;
            }
            Op::Sigmoid(a) => {
                let ga = grad_zip(g, &node.value, &node.value, |g, y, _| g * y * (1.0 - y));
                self.accumulate(grads, *a, ga)?;
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let ga = grad_zip(g, x, x, |g, x, _| g * sigmoid(x));
                self.accumulate(grads, *a, ga)?;
            }
            Op::Recip(a) => {
                let ga = grad_zip(g, &node.value, &node.value, |g, y, _| -g * y * y);
                self.accumulate(grads, *a, ga)?;
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    let out = ga.row_mut(r);
                    for c in 0..gr.len() {
                        out[c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::RowL2Normalize(a) => {
                let (x, y) = (self.value(*a), &node.value);
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    let out = ga.row_mut(r);
                    for c in 0..gr.len() {
                        out[c] = (gr[c] - dot * yr[c]) / norm;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::Sum(a) => {
                let k = g.get(0, 0);
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(shape.0, shape.1, k))?;
            }
            Op::Mean(a) => {
                let shape = self.value(*a).shape();
                let k = g.get(0, 0) / (shape.0 * shape.1) as f64;
                self.accumulate(grads, *a, Matrix::filled(shape.0, shape.1, k))?;
            }
            Op::RowSum(a) => {
                let shape = self.value(*a).shape();
                let mut ga = Matrix::zeros(shape.0, shape.1);
                for r in 0..shape.0 {
                    let k = g.get(r, 0);
                    for x in ga.row_mut(r) {
                        *x = k;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::GatherRows(a, idx) => {
                let shape = self.value(*a).shape();
                let mut ga = Matrix::zeros(shape.0, shape.1);
                for (r, &src) in idx.iter().enumerate() {
                    let grow = g.row(r);
                    let out = ga.row_mut(src);
                    for c in 0..grow.len() {
                        out[c] += grow[c];
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::ScatterAddRows(a, idx) => {
                let shape = self.value(*a).shape();
                let mut ga = Matrix::zeros(shape.0, shape.1);
                for (r, &dst) in idx.iter().enumerate() {
                    ga.row_mut(r).copy_from_slice(g.row(dst));
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::Cell(a, r, c) => {
                let shape = self.value(*a).shape();
                let mut ga = Matrix::zeros(shape.0, shape.1);
                ga.set(*r, *c, g.get(0, 0));
                self.accumulate(grads, *a, ga)?;
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn grad_zip(g: &Matrix, a: &Matrix, b: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Matrix {
    let data: Vec<f64> = g
        .as_slice()
        .iter()
        .zip(a.as_slice())
        .zip(b.as_slice())
        .map(|((&g, &a), &b)| f(g, a, b))
        .collect();
    Matrix::from_vec(g.rows(), g.cols(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Central finite differences of `f` at `x0`, h = 1e-5.
    fn numeric_grad(f: &dyn Fn(&Matrix) -> f64, x0: &Matrix) -> Matrix {
        let h = 1e-5;
        let mut out = Matrix::zeros(x0.rows(), x0.cols());
        for i in 0..x0.len() {
            let mut plus = x0.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = x0.clone();
            minus.as_mut_slice()[i] -= h;
            out.as_mut_slice()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let denom = x.abs().max(y.abs()).max(1.0);
            assert!(
                ((x - y) / denom).abs() < tol,
                "mismatch: {} vs {} (tol {})",
                x,
                y,
                tol
            );
        }
    }

    /// Gradient-check a single-input construction against finite differences.
    /// The loss is sum(out * W) for a fixed random W so every output entry
    /// contributes with a distinct weight.
    fn gradcheck(seed: u64, x0: Matrix, build: &dyn Fn(&mut Tape, TensorId) -> TensorId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probe_tape = Tape::new();
        let x = probe_tape.leaf(x0.clone(), true).unwrap();
        let out = build(&mut probe_tape, x);
        let w = rand_matrix(&mut rng, probe_tape.shape(out).0, probe_tape.shape(out).1);

        let eval = |xv: &Matrix| -> f64 {
            let mut tape = Tape::new();
            let x = tape.leaf(xv.clone(), true).unwrap();
            let out = build(&mut tape, x);
            let wc = tape.constant(w.clone()).unwrap();
            let prod = tape.mul(out, wc).unwrap();
            let loss = tape.sum(prod).unwrap();
            tape.value(loss).get(0, 0)
        };

        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true).unwrap();
        let out = build(&mut tape, x);
        let wc = tape.constant(w.clone()).unwrap();
        let prod = tape.mul(out, wc).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(x).unwrap();
        let numeric = numeric_grad(&eval, &x0);
        assert_close(analytic, &numeric, 1e-6);
    }

    #[test]
    fn row_softmax_uniform_inputs() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap())
            .unwrap();
        let y = tape.row_softmax(x).unwrap();
        for &v in tape.value(y).as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn row_softmax_rows_sum_to_one_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let x = tape.constant(rand_matrix(&mut rng, 5, 9).scale(30.0)).unwrap();
        let y = tape.row_softmax(x).unwrap();
        for r in 0..5 {
            let row = tape.value(y).row(r);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn leaky_relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::scalar(-1.0)).unwrap();
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).get(0, 0), -0.2);
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Matrix::identity(2)).unwrap();
        let m = tape
            .constant(Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap())
            .unwrap();
        let y = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(y), tape.value(m));
    }

    #[test]
    fn row_l2_normalize_zero_row_maps_to_zero() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap())
            .unwrap();
        let y = tape.row_l2_normalize(x).unwrap();
        assert!((tape.value(y).get(0, 0) - 0.6).abs() < 1e-15);
        assert_eq!(tape.value(y).get(1, 0), 0.0);
        assert_eq!(tape.value(y).get(1, 1), 0.0);
        let norm: f64 = tape.value(y).row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2), true).unwrap();
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn backward_of_square_is_two_x() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), true)
            .unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(
            grads.get(x).unwrap(),
            &Matrix::from_rows(&[vec![2.0, 4.0]]).unwrap()
        );
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2), true).unwrap();
        assert!(matches!(tape.backward(x), Err(HecoError::Contract(_))));
    }

    #[test]
    fn unreachable_parameter_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(1.0), true).unwrap();
        let unused = tape.leaf(Matrix::scalar(5.0), true).unwrap();
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused, (1, 1)), Matrix::zeros(1, 1));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::scalar(-1.0)).unwrap();
        assert!(matches!(
            tape.log(x),
            Err(HecoError::Numeric { op: "log" })
        ));
        let big = tape.constant(Matrix::scalar(1e308)).unwrap();
        assert!(tape.exp(big).is_err());
    }

    #[test]
    fn gradcheck_unary_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_matrix(&mut rng, 3, 4);
        gradcheck(1, x.clone(), &|t, x| t.elu(x).unwrap());
        gradcheck(2, x.clone(), &|t, x| t.tanh(x).unwrap());
        gradcheck(3, x.clone(), &|t, x| t.leaky_relu(x, 0.2).unwrap());
        gradcheck(4, x.clone(), &|t, x| t.exp(x).unwrap());
        gradcheck(5, x.clone(), &|t, x| t.sigmoid(x).unwrap());
        gradcheck(6, x.clone(), &|t, x| t.softplus(x).unwrap());
        gradcheck(7, x.clone(), &|t, x| t.row_softmax(x).unwrap());
        gradcheck(8, x.clone(), &|t, x| t.scale(x, -2.5).unwrap());
        // log/recip need values away from zero
        let pos = x.map(|v| v.abs() + 0.5);
        gradcheck(9, pos.clone(), &|t, x| t.log(x).unwrap());
        gradcheck(10, pos.clone(), &|t, x| t.recip(x).unwrap());
        // l2-normalize with rows away from the origin
        let shifted = x.map(|v| v + 2.0);
        gradcheck(11, shifted, &|t, x| t.row_l2_normalize(x).unwrap());
    }

    #[test]
    fn gradcheck_reductions_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_matrix(&mut rng, 4, 3);
        gradcheck(22, x.clone(), &|t, x| t.sum(x).unwrap());
        gradcheck(23, x.clone(), &|t, x| t.mean(x).unwrap());
        gradcheck(24, x.clone(), &|t, x| t.row_sum(x).unwrap());
        gradcheck(25, x.clone(), &|t, x| t.transpose(x).unwrap());
        gradcheck(26, x.clone(), &|t, x| t.cell(x, 2, 1).unwrap());
        gradcheck(27, x.clone(), &|t, x| {
            t.gather_rows(x, Rc::new(vec![0, 2, 2, 3, 1])).unwrap()
        });
        gradcheck(28, x.clone(), &|t, x| {
            t.scatter_add_rows(x, Rc::new(vec![1, 0, 1, 5]), 6).unwrap()
        });
    }

    #[test]
    fn gradcheck_binary_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a0 = rand_matrix(&mut rng, 3, 4);
        let b0 = rand_matrix(&mut rng, 4, 2);
        let c0 = rand_matrix(&mut rng, 3, 4);
        let bias0 = rand_matrix(&mut rng, 1, 4);
        let col0 = rand_matrix(&mut rng, 3, 1);
        let s0 = Matrix::scalar(0.7);

        // For two-input ops, check the gradient w.r.t. each side with the
        // other held constant.
        let pairs: Vec<(Matrix, Matrix, Box<dyn Fn(&mut Tape, TensorId, TensorId) -> TensorId>)> = vec![
            (a0.clone(), b0.clone(), Box::new(|t: &mut Tape, x, y| t.matmul(x, y).unwrap())),
            (a0.clone(), c0.clone(), Box::new(|t: &mut Tape, x, y| t.add(x, y).unwrap())),
            (a0.clone(), c0.clone(), Box::new(|t: &mut Tape, x, y| t.mul(x, y).unwrap())),
            (a0.clone(), bias0.clone(), Box::new(|t: &mut Tape, x, y| t.add_row_broadcast(x, y).unwrap())),
            (a0.clone(), col0.clone(), Box::new(|t: &mut Tape, x, y| t.add_col_broadcast(x, y).unwrap())),
            (a0.clone(), col0.clone(), Box::new(|t: &mut Tape, x, y| t.mul_col_broadcast(x, y).unwrap())),
            (a0.clone(), s0.clone(), Box::new(|t: &mut Tape, x, y| t.mul_scalar(x, y).unwrap())),
            (a0.clone(), c0.clone(), Box::new(|t: &mut Tape, x, y| t.concat_cols(x, y).unwrap())),
            (a0.clone(), c0.clone(), Box::new(|t: &mut Tape, x, y| t.concat_rows(x, y).unwrap())),
        ];
        for (i, (l0, r0, build)) in pairs.iter().enumerate() {
            let rc = r0.clone();
            gradcheck(100 + i as u64, l0.clone(), &|t, x| {
                let r = t.constant(rc.clone()).unwrap();
                build(t, x, r)
            });
            let lc = l0.clone();
            gradcheck(200 + i as u64, r0.clone(), &|t, y| {
                let l = t.constant(lc.clone()).unwrap();
                build(t, l, y)
            });
        }
    }

    #[test]
    fn dropout_applies_mask_and_passes_gradcheck() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::filled(2, 2, 3.0), true).unwrap();
        let mask = Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let y = tape.dropout(x, &mask).unwrap();
        assert_eq!(
            tape.value(y),
            &Matrix::from_rows(&[vec![0.0, 6.0], vec![6.0, 0.0]]).unwrap()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let x0 = rand_matrix(&mut rng, 3, 3);
        let m = rand_matrix(&mut rng, 3, 3).map(|v| if v > 0.0 { 2.0 } else { 0.0 });
        gradcheck(72, x0, &|t, x| t.dropout(x, &m).unwrap());
    }

    #[test]
    fn gradcheck_sparse_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let sparse = Rc::new(
            SparseMatrix::from_triplets(
                4,
                4,
                &[(0, 0, 0.5), (0, 1, 0.3), (1, 1, 1.0), (2, 0, 0.2), (2, 3, 0.7), (3, 2, 0.4)],
            )
            .unwrap(),
        );
        let x = rand_matrix(&mut rng, 4, 3);
        let s2 = Rc::clone(&sparse);
        gradcheck(42, x, &|t, x| t.sparse_matmul(Rc::clone(&s2), x).unwrap());
    }

    #[test]
    fn gradcheck_composite_graph() {
        // A small composite expression exercising several op kinds at once.
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let x = rand_matrix(&mut rng, 4, 4);
        let w = rand_matrix(&mut rng, 4, 4);
        gradcheck(52, x, &|t, x| {
            let wc = t.constant(w.clone()).unwrap();
            let h = t.matmul(x, wc).unwrap();
            let h = t.elu(h).unwrap();
            let n = t.row_l2_normalize(h).unwrap();
            let nt = t.transpose(n).unwrap();
            let s = t.matmul(n, nt).unwrap();
            let e = t.exp(s).unwrap();
            let d = t.row_sum(e).unwrap();
            let ld = t.log(d).unwrap();
            t.row_sum(ld).unwrap()
        });
    }

    #[test]
    fn sparse_matmul_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let triplets = vec![(0usize, 1usize, 0.5f64), (1, 0, 0.25), (2, 2, 1.5), (0, 2, -0.3)];
        let sparse = SparseMatrix::from_triplets(3, 3, &triplets).unwrap();
        let mut dense = Matrix::zeros(3, 3);
        for &(r, c, v) in &triplets {
            dense.set(r, c, v);
        }
        let h = rand_matrix(&mut rng, 3, 5);
        assert_close(&sparse.apply(&h).unwrap(), &dense.matmul(&h).unwrap(), 1e-14);
        let g = rand_matrix(&mut rng, 3, 5);
        assert_close(
            &sparse.apply_transpose(&g).unwrap(),
            &dense.transpose().matmul(&g).unwrap(),
            1e-14,
        );
    }
}
