//! Dense 2-D tensors with tape-based reverse-mode differentiation.
//!
//! Every tensor is a row-major `rows × cols` matrix of `f64`. Vectors are `1 × n`
//! and scalars `1 × 1`. A tensor is *tracked* when it has a node on a [`Tape`];
//! any op with at least one tracked input records its result on that tape.
//!
//! Backward passes are themselves written in terms of these ops. With
//! `create_graph` set, the gradient computation is recorded on the same tape and
//! the returned gradients can be differentiated again.

pub mod checkpoint;
mod kernels;
mod params;
mod sparse;
mod tape;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use params::ParamSet;
pub use sparse::SparseMatrix;
pub use tape::{backward, backward_params, Tape};

use tape::{NodeRef, Op};

pub type Shape = [usize; 2];

/// Default negative slope for [`Tensor::leaky_relu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("numeric domain violation in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid sparse matrix: {0}")]
    Sparse(String),
    #[error("operands are recorded on different tapes")]
    TapeMismatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.data.len() <= 16 {
            s.field("data", &self.data);
        }
        s.field("node", &self.node.as_ref().map(|n| n.id)).finish()
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape[0] * shape[1] != data.len() {
            return Err(TensorError::Contract(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data: Arc::new(data), node: None })
    }

    /// Builds from nested rows; panics on ragged input (test and literal use).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == n), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new([rows.len(), n], data).expect("consistent shape")
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self::new([1, v.len()], v.to_vec()).expect("consistent shape")
    }

    pub fn scalar(v: f64) -> Self {
        Self::new([1, 1], vec![v]).expect("consistent shape")
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, v: f64) -> Self {
        Self::new(shape, vec![v; shape[0] * shape[1]]).expect("consistent shape")
    }

    pub fn eye(n: usize) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        Self::new([n, n], d).expect("consistent shape")
    }

    pub fn randn(shape: Shape, std: f64, rng: &mut impl Rng) -> Self {
        let d = (0..shape[0] * shape[1])
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>();
        Self::new(shape, d).expect("consistent shape")
    }

    pub fn uniform(shape: Shape, bound: f64, rng: &mut impl Rng) -> Self {
        let d = (0..shape[0] * shape[1]).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::new(shape, d).expect("consistent shape")
    }

    /// He-uniform init for a `fan_in × fan_out` weight: bound `sqrt(6/fan_in)`, the ReLU gain.
    pub fn kaiming_uniform(shape: Shape, rng: &mut impl Rng) -> Self {
        Self::uniform(shape, (6.0 / shape[0].max(1) as f64).sqrt(), rng)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.shape[1]..(r + 1) * self.shape[1]]
    }

    /// The single value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor {:?}", self.shape);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Tape position, when tracked.
    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    /// Untracked view of the same values.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape, data: self.data.clone(), node: None }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn from_parts(shape: Shape, data: Arc<Vec<f64>>, node: Option<NodeRef>) -> Self {
        Tensor { shape, data, node }
    }

    pub(crate) fn data_arc(&self) -> &Arc<Vec<f64>> {
        &self.data
    }

    fn apply(op: Op, inputs: &[&Tensor], shape: Shape) -> Result<Tensor> {
        let xs: Vec<_> = inputs.iter().map(|t| (t.data.as_slice(), t.shape)).collect();
        let data = op.forward(&xs, shape);
        Tensor::record(op, inputs, shape, data)
    }

    fn record(op: Op, inputs: &[&Tensor], shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        let mut tape: Option<&Tape> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match tape {
                    None => tape = Some(&n.tape),
                    Some(existing) if !existing.same(&n.tape) => return Err(TensorError::TapeMismatch),
                    _ => {}
                }
            }
        }
        let data = Arc::new(data);
        let node = match tape {
            Some(tape) => Some(tape.push(op, inputs, shape, data.clone())),
            None => None,
        };
        Ok(Tensor { shape, data, node })
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::Shape { op, lhs: self.shape, rhs: other.shape });
        }
        Ok(())
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` with optional transposes, without materializing them.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        let k_a = if ta { self.shape[0] } else { self.shape[1] };
        let k_b = if tb { other.shape[1] } else { other.shape[0] };
        if k_a != k_b {
            return Err(TensorError::Shape { op: "matmul", lhs: self.shape, rhs: other.shape });
        }
        let m = if ta { self.shape[1] } else { self.shape[0] };
        let n = if tb { other.shape[0] } else { other.shape[1] };
        Tensor::apply(Op::MatMul { ta, tb }, &[self, other], [m, n])
    }

    pub fn transpose(&self) -> Result<Tensor> {
        Tensor::apply(Op::Transpose, &[self], [self.shape[1], self.shape[0]])
    }

    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape[0] * shape[1] != self.len() {
            return Err(TensorError::Shape { op: "reshape", lhs: self.shape, rhs: shape });
        }
        Tensor::apply(Op::Reshape, &[self], shape)
    }

    /// Flattens to a `1 × n` row vector.
    pub fn flatten(&self) -> Result<Tensor> {
        self.reshape([1, self.len()])
    }

    /// Sparse-constant times dense: `adj · self`. Differentiable in `self` only.
    pub fn spmm(adj: &Arc<SparseMatrix>, x: &Tensor) -> Result<Tensor> {
        if adj.cols() != x.shape[0] {
            return Err(TensorError::Shape { op: "sparse_dense_matmul", lhs: [adj.rows(), adj.cols()], rhs: x.shape });
        }
        Tensor::apply(Op::SpMM(adj.clone()), &[x], [adj.rows(), x.shape[1]])
    }

    // ---- broadcasting and elementwise binary ops ----

    /// Expands a `1×1`, `1×n` or `m×1` tensor to `shape`.
    pub fn broadcast_to(&self, shape: Shape) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let ok = match self.shape {
            [1, 1] => true,
            [1, c] => c == shape[1],
            [r, 1] => r == shape[0],
            _ => false,
        };
        if !ok {
            return Err(TensorError::Shape { op: "broadcast", lhs: self.shape, rhs: shape });
        }
        Tensor::apply(Op::BroadcastTo, &[self], shape)
    }

    fn binary(&self, other: &Tensor, op: Op, name: &'static str) -> Result<Tensor> {
        let (a, b);
        let (lhs, rhs) = if self.shape == other.shape {
            (self, other)
        } else if other.len() <= self.len() {
            b = other.broadcast_to(self.shape).map_err(|_| TensorError::Shape {
                op: name,
                lhs: self.shape,
                rhs: other.shape,
            })?;
            (self, &b)
        } else {
            a = self.broadcast_to(other.shape).map_err(|_| TensorError::Shape {
                op: name,
                lhs: self.shape,
                rhs: other.shape,
            })?;
            (&a, other)
        };
        Tensor::apply(op, &[lhs, rhs], lhs.shape)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, "mul")
    }

    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "maximum")?;
        self.binary(other, Op::Maximum, "maximum")
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.mul(&other.recip()?)
    }

    // ---- elementwise unary ops ----

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        Tensor::apply(Op::Scale(c), &[self], self.shape)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        Tensor::apply(Op::AddScalar(c), &[self], self.shape)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        Tensor::apply(Op::LeakyRelu(slope), &[self], self.shape)
    }

    pub fn relu(&self) -> Result<Tensor> {
        Tensor::apply(Op::LeakyRelu(0.0), &[self], self.shape)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        Tensor::apply(Op::Sigmoid, &[self], self.shape)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(bad) = self.data.iter().find(|&&x| !(x > 0.0)) {
            return Err(TensorError::Domain { op: "log", detail: format!("input {bad}") });
        }
        Tensor::apply(Op::Log, &[self], self.shape)
    }

    pub fn exp(&self) -> Result<Tensor> {
        if let Some(bad) = self.data.iter().find(|&&x| !x.exp().is_finite()) {
            return Err(TensorError::Domain { op: "exp", detail: format!("overflow at input {bad}") });
        }
        Tensor::apply(Op::Exp, &[self], self.shape)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(bad) = self.data.iter().find(|&&x| !(x >= 0.0)) {
            return Err(TensorError::Domain { op: "sqrt", detail: format!("input {bad}") });
        }
        Tensor::apply(Op::Sqrt, &[self], self.shape)
    }

    pub fn recip(&self) -> Result<Tensor> {
        if self.data.iter().any(|&x| x == 0.0 || !x.is_finite()) {
            return Err(TensorError::Domain { op: "recip", detail: "zero or non-finite input".into() });
        }
        Tensor::apply(Op::Recip, &[self], self.shape)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        Tensor::apply(Op::Clamp(lo, hi), &[self], self.shape)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    // ---- reductions ----

    pub fn sum(&self) -> Result<Tensor> {
        Tensor::apply(Op::Sum, &[self], [1, 1])
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(TensorError::Contract("mean of empty tensor".into()));
        }
        self.sum()?.scale(1.0 / self.len() as f64)
    }

    /// Sum over rows: `m×n → 1×n`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        Tensor::apply(Op::SumRows, &[self], [1, self.shape[1]])
    }

    /// Sum over columns: `m×n → m×1`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        Tensor::apply(Op::SumCols, &[self], [self.shape[0], 1])
    }

    // ---- indexing ----

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.shape[0]) {
            return Err(TensorError::Contract(format!("gather row {bad} out of {} rows", self.shape[0])));
        }
        let shape = [idx.len(), self.shape[1]];
        Tensor::apply(Op::GatherRows(Arc::new(idx.to_vec())), &[self], shape)
    }

    /// Row `r` of the output is the sum of input rows `i` with `idx[i] == r`.
    pub fn scatter_add_rows(&self, idx: &[usize], out_rows: usize) -> Result<Tensor> {
        if idx.len() != self.shape[0] {
            return Err(TensorError::Contract(format!(
                "scatter index has {} entries for {} rows",
                idx.len(),
                self.shape[0]
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(TensorError::Contract(format!("scatter row {bad} out of {out_rows}")));
        }
        let shape = [out_rows, self.shape[1]];
        Tensor::apply(Op::ScatterAddRows(Arc::new(idx.to_vec())), &[self], shape)
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        if start + len > self.shape[1] {
            return Err(TensorError::Shape { op: "slice_cols", lhs: self.shape, rhs: [start, len] });
        }
        Tensor::apply(Op::SliceCols(start), &[self], [self.shape[0], len])
    }

    /// Places `self` at column offset `start` inside a zero matrix `total` columns wide.
    pub fn pad_cols(&self, start: usize, total: usize) -> Result<Tensor> {
        if start + self.shape[1] > total {
            return Err(TensorError::Shape { op: "pad_cols", lhs: self.shape, rhs: [start, total] });
        }
        Tensor::apply(Op::PadCols(start), &[self], [self.shape[0], total])
    }

    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        for p in parts {
            if p.shape[0] != first.shape[0] {
                return Err(TensorError::Shape { op: "concat_cols", lhs: first.shape, rhs: p.shape });
            }
        }
        let total = parts.iter().map(|p| p.shape[1]).sum();
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::apply(Op::ConcatCols, &refs, [first.shape[0], total])
    }

    // ---- composites ----

    /// Row-wise dot product of two equally shaped matrices: `m×n, m×n → m×1`.
    pub fn row_dot(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "row_dot")?;
        self.mul(other)?.sum_cols()
    }

    /// Divides each row by its L2 norm. Rows with norm below `min_norm` are an error.
    pub fn l2_normalize_rows(&self, min_norm: f64) -> Result<Tensor> {
        let norms = self.square()?.sum_cols()?.sqrt()?;
        if let Some(r) = norms.data.iter().position(|&n| n < min_norm) {
            return Err(TensorError::Domain {
                op: "l2_normalize_rows",
                detail: format!("row {r} has degenerate norm {}", norms.data[r]),
            });
        }
        self.mul(&norms.recip()?)
    }

    /// Numerically stable row-wise log-softmax.
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let max: Vec<f64> = self
            .data
            .chunks_exact(self.shape[1].max(1))
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shifted = self.sub(&Tensor::new([self.shape[0], 1], max)?)?;
        let lse = shifted.exp()?.sum_cols()?.log()?;
        shifted.sub(&lse)
    }

    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.log_softmax_rows()?.exp()
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

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(Tensor::eye(2).matmul(&m).unwrap().data(), m.data());
        let col = Tensor::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(m.matmul(&col).unwrap().data(), &[2.0, 4.0]);
        let z = Tensor::zeros([1, 3]).matmul(&Tensor::full([3, 2], 7.0)).unwrap();
        assert_eq!(z.shape(), [1, 2]);
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let err = Tensor::zeros([2, 3]).matmul(&Tensor::zeros([2, 3])).unwrap_err();
        assert!(matches!(err, TensorError::Shape { op: "matmul", .. }));
    }

    #[test]
    fn transposed_matmul_matches_explicit_transpose() {
        let a = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Tensor::from_rows(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let want = a.transpose().unwrap().matmul(&b).unwrap();
        close(a.matmul_t(&b, true, false).unwrap().data(), want.data());
        let want = b.matmul(&b.transpose().unwrap()).unwrap();
        close(b.matmul_t(&b, false, true).unwrap().data(), want.data());
    }

    #[test]
    fn elementwise_definitions() {
        let x = Tensor::row_vector(&[-1.0, 2.0]);
        close(x.leaky_relu(LEAKY_RELU_SLOPE).unwrap().data(), &[-0.01, 2.0]);
        close(x.relu().unwrap().data(), &[0.0, 2.0]);
        assert_eq!(Tensor::scalar(0.0).sigmoid().unwrap().item(), 0.5);
        let a = Tensor::row_vector(&[2.0, 3.0]);
        let b = Tensor::row_vector(&[4.0, 5.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[8.0, 15.0]);
    }

    #[test]
    fn log_and_exp_domain_errors() {
        assert!(matches!(Tensor::row_vector(&[1.0, 0.0]).log(), Err(TensorError::Domain { op: "log", .. })));
        assert!(matches!(Tensor::scalar(1000.0).exp(), Err(TensorError::Domain { op: "exp", .. })));
    }

    #[test]
    fn row_and_column_broadcast() {
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let r = Tensor::row_vector(&[10.0, 20.0]);
        assert_eq!(m.add(&r).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        let c = Tensor::new([2, 1], vec![2.0, 3.0]).unwrap();
        assert_eq!(m.mul(&c).unwrap().data(), &[2.0, 4.0, 9.0, 12.0]);
        assert!(m.add(&Tensor::zeros([3, 2])).is_err());
    }

    #[test]
    fn sparse_selection_and_empty() {
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let adj = Arc::new(SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]).unwrap());
        let y = Tensor::spmm(&adj, &x).unwrap();
        assert_eq!(y.row(0), &[3.0, 4.0]);
        assert_eq!(y.row(1), &[0.0, 0.0]);
        let empty = Arc::new(SparseMatrix::empty(2, 2));
        assert!(Tensor::spmm(&empty, &x).unwrap().data().iter().all(|&v| v == 0.0));
        let wrong = Arc::new(SparseMatrix::empty(2, 3));
        assert!(Tensor::spmm(&wrong, &x).is_err());
    }

    #[test]
    fn normalize_rejects_zero_rows() {
        let z = Tensor::zeros([2, 3]);
        assert!(z.l2_normalize_rows(1e-12).is_err());
        let x = Tensor::from_rows(&[&[3.0, 4.0]]);
        close(x.l2_normalize_rows(1e-12).unwrap().data(), &[0.6, 0.8]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[-500.0, 0.0, 500.0]]);
        let p = x.softmax_rows().unwrap();
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
