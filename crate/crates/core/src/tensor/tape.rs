use std::sync::{Arc, Mutex, MutexGuard};

use super::kernels;
use super::params::ParamSet;
use super::sparse::SparseMatrix;
use super::{Result, Shape, Tensor, TensorError};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    Maximum,
    BroadcastTo,
    Scale(f64),
    AddScalar(f64),
    LeakyRelu(f64),
    Sigmoid,
    Log,
    Exp,
    Sqrt,
    Recip,
    Clamp(f64, f64),
    Sum,
    SumRows,
    SumCols,
    Transpose,
    Reshape,
    SpMM(Arc<SparseMatrix>),
    GatherRows(Arc<Vec<usize>>),
    ScatterAddRows(Arc<Vec<usize>>),
    SliceCols(usize),
    PadCols(usize),
    ConcatCols,
}

impl Op {
    /// Computes the op's output from input buffers. The single implementation used
    /// both when recording and when replaying a tape.
    pub(crate) fn forward(&self, xs: &[(&[f64], Shape)], out: Shape) -> Vec<f64> {
        let (a, sa) = xs.first().copied().unwrap_or((&[], [0, 0]));
        match self {
            Op::Leaf => a.to_vec(),
            Op::MatMul { ta, tb } => kernels::matmul(a, sa, *ta, xs[1].0, xs[1].1, *tb).1,
            Op::Add => kernels::zip(a, xs[1].0, |x, y| x + y),
            Op::Sub => kernels::zip(a, xs[1].0, |x, y| x - y),
            Op::Mul => kernels::zip(a, xs[1].0, |x, y| x * y),
            Op::Maximum => kernels::zip(a, xs[1].0, |x, y| if x >= y { x } else { y }),
            Op::BroadcastTo => kernels::broadcast_to(a, sa, out),
            Op::Scale(c) => kernels::map(a, |x| x * c),
            Op::AddScalar(c) => kernels::map(a, |x| x + c),
            Op::LeakyRelu(s) => kernels::map(a, |x| if x > 0.0 { x } else { s * x }),
            Op::Sigmoid => kernels::map(a, super::sigmoid),
            Op::Log => kernels::map(a, f64::ln),
            Op::Exp => kernels::map(a, f64::exp),
            Op::Sqrt => kernels::map(a, f64::sqrt),
            Op::Recip => kernels::map(a, |x| 1.0 / x),
            Op::Clamp(lo, hi) => kernels::map(a, |x| x.clamp(*lo, *hi)),
            Op::Sum => vec![kernels::sum(a)],
            Op::SumRows => kernels::sum_rows(a, sa),
            Op::SumCols => kernels::sum_cols(a, sa),
            Op::Transpose => kernels::transpose(a, sa),
            Op::Reshape => a.to_vec(),
            Op::SpMM(adj) => kernels::spmm(adj, a, sa[1]),
            Op::GatherRows(idx) => kernels::gather_rows(a, sa[1], idx),
            Op::ScatterAddRows(idx) => kernels::scatter_add_rows(a, sa[1], idx, out[0]),
            Op::SliceCols(start) => kernels::slice_cols(a, sa, *start, out[1]),
            Op::PadCols(start) => kernels::pad_cols(a, sa, *start, out[1]),
            Op::ConcatCols => kernels::concat_cols(xs).1,
        }
    }
}

#[derive(Clone)]
struct Input {
    id: Option<usize>,
    shape: Shape,
    value: Arc<Vec<f64>>,
}

#[derive(Clone)]
struct Node {
    op: Op,
    inputs: Vec<Input>,
    shape: Shape,
    value: Arc<Vec<f64>>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Append-only record of tracked computations. Nodes are stored in creation
/// order, which is a topological order because inputs always exist before the
/// node that consumes them.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Arc<Mutex<TapeInner>>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, TapeInner> {
        self.inner.lock().expect("tape mutex poisoned")
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable leaf sharing `t`'s values.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let node = self.push(Op::Leaf, &[], t.shape(), t.data_arc().clone());
        Tensor::from_parts(t.shape(), t.data_arc().clone(), Some(node))
    }

    /// Registers every tensor of `params` as a leaf on this tape.
    pub fn attach(&self, params: &ParamSet) -> ParamSet {
        params.map(|_, t| self.leaf(t))
    }

    pub(crate) fn push(&self, op: Op, inputs: &[&Tensor], shape: Shape, value: Arc<Vec<f64>>) -> NodeRef {
        let inputs = inputs
            .iter()
            .map(|t| Input {
                id: t.node.as_ref().filter(|n| n.tape.same(self)).map(|n| n.id),
                shape: t.shape(),
                value: t.data_arc().clone(),
            })
            .collect();
        let mut inner = self.lock();
        let id = inner.nodes.len();
        inner.nodes.push(Node { op, inputs, shape, value });
        NodeRef { tape: self.clone(), id }
    }

    fn node(&self, id: usize) -> Node {
        self.lock().nodes[id].clone()
    }

    /// Every node's inputs precede it.
    pub fn is_topological(&self) -> bool {
        let inner = self.lock();
        inner.nodes.iter().enumerate().all(|(i, n)| n.inputs.iter().all(|x| x.id.map_or(true, |j| j < i)))
    }

    /// Recomputes every non-leaf node from its recorded inputs and checks the
    /// result is bitwise identical to the recorded value.
    pub fn replay(&self) -> Result<()> {
        let inner = self.lock();
        for (i, node) in inner.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            for (k, input) in node.inputs.iter().enumerate() {
                if let Some(j) = input.id {
                    if !Arc::ptr_eq(&inner.nodes[j].value, &input.value) {
                        return Err(TensorError::Contract(format!("node {i} input {k} does not alias node {j}")));
                    }
                }
            }
            let xs: Vec<_> = node.inputs.iter().map(|x| (x.value.as_slice(), x.shape)).collect();
            let again = node.op.forward(&xs, node.shape);
            let same = again.len() == node.value.len()
                && again.iter().zip(node.value.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(TensorError::Contract(format!("replay of node {i} ({:?}) diverged", node.op)));
            }
        }
        Ok(())
    }
}

/// Gradients of a scalar `loss` with respect to each tensor in `wrt`.
///
/// Tensors in `wrt` that the loss does not depend on (or that are untracked)
/// receive zeros. With `create_graph`, the backward computation is recorded on
/// the loss's tape so the gradients are themselves differentiable.
pub fn backward(loss: &Tensor, wrt: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if loss.len() != 1 {
        return Err(TensorError::Contract(format!("backward needs a scalar loss, got shape {:?}", loss.shape())));
    }
    let Some(root_ref) = &loss.node else {
        return Err(TensorError::Contract("loss is not recorded on a tape".into()));
    };
    let tape = root_ref.tape.clone();
    let root = root_ref.id;

    let mut targets = Vec::with_capacity(wrt.len());
    for w in wrt {
        targets.push(match &w.node {
            Some(n) if n.tape.same(&tape) => Some(n.id).filter(|&id| id <= root),
            Some(_) => return Err(TensorError::TapeMismatch),
            None => None,
        });
    }

    let mut is_target = vec![false; root + 1];
    for id in targets.iter().flatten() {
        is_target[*id] = true;
    }
    let reach = {
        let inner = tape.lock();
        let mut reach = is_target.clone();
        for i in 0..=root {
            if !reach[i] {
                reach[i] = inner.nodes[i].inputs.iter().any(|x| x.id.is_some_and(|j| reach[j]));
            }
        }
        reach
    };

    let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
    grads[root] = Some(Tensor::full(loss.shape(), 1.0));
    for i in (0..=root).rev() {
        if !reach[i] {
            continue;
        }
        let Some(g) = grads[i].take() else { continue };
        let node = tape.node(i);
        if !matches!(node.op, Op::Leaf) {
            let xs: Vec<Tensor> = node
                .inputs
                .iter()
                .map(|x| {
                    let nref = x.id.filter(|_| create_graph).map(|id| NodeRef { tape: tape.clone(), id });
                    Tensor::from_parts(x.shape, x.value.clone(), nref)
                })
                .collect();
            let out_ref = create_graph.then(|| NodeRef { tape: tape.clone(), id: i });
            let out = Tensor::from_parts(node.shape, node.value.clone(), out_ref);
            let need: Vec<bool> = node.inputs.iter().map(|x| x.id.is_some_and(|j| reach[j])).collect();
            let gin = vjp(&node.op, &xs, &out, &g, &need)?;
            for (k, gk) in gin.into_iter().enumerate() {
                if let (Some(gk), Some(j)) = (gk, node.inputs[k].id) {
                    if !need[k] {
                        continue;
                    }
                    grads[j] = Some(match grads[j].take() {
                        Some(prev) => prev.add(&gk)?,
                        None => gk,
                    });
                }
            }
        }
        if is_target[i] {
            grads[i] = Some(g);
        }
    }

    Ok(wrt
        .iter()
        .zip(&targets)
        .map(|(w, id)| id.and_then(|id| grads[id].clone()).unwrap_or_else(|| Tensor::zeros(w.shape())))
        .collect())
}

/// [`backward`] over a named parameter set; the result has the same names and order.
pub fn backward_params(loss: &Tensor, wrt: &ParamSet, create_graph: bool) -> Result<ParamSet> {
    let tensors: Vec<Tensor> = wrt.iter().map(|(_, t)| t.clone()).collect();
    let grads = backward(loss, &tensors, create_graph)?;
    Ok(ParamSet::from_pairs(wrt.names().map(str::to_owned).zip(grads).collect()))
}

fn mask(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn reduce_to(g: &Tensor, shape: Shape) -> Result<Tensor> {
    if g.shape() == shape {
        Ok(g.clone())
    } else if shape == [1, 1] {
        g.sum()
    } else if shape[0] == 1 {
        g.sum_rows()
    } else {
        g.sum_cols()
    }
}

/// Vector-Jacobian products, written with tensor ops so they can be recorded.
fn vjp(op: &Op, x: &[Tensor], out: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
    let want = |k: usize| need.get(k).copied().unwrap_or(false);
    let one = |t: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(t?)]) };
    match op {
        Op::Leaf => Ok(vec![]),
        Op::MatMul { ta, tb } => {
            let (a, b) = (&x[0], &x[1]);
            let da = if want(0) {
                Some(if !ta { g.matmul_t(b, false, !tb)? } else { b.matmul_t(g, *tb, true)? })
            } else {
                None
            };
            let db = if want(1) {
                Some(if !tb { a.matmul_t(g, !ta, false)? } else { g.matmul_t(a, true, *ta)? })
            } else {
                None
            };
            Ok(vec![da, db])
        }
        Op::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
        Op::Sub => Ok(vec![Some(g.clone()), if want(1) { Some(g.neg()?) } else { None }]),
        Op::Mul => {
            Ok(vec![if want(0) { Some(g.mul(&x[1])?) } else { None }, if want(1) { Some(g.mul(&x[0])?) } else { None }])
        }
        Op::Maximum => {
            let pick_a = Tensor::new(
                x[0].shape(),
                x[0].data().iter().zip(x[1].data()).map(|(a, b)| if a >= b { 1.0 } else { 0.0 }).collect(),
            )?;
            let pick_b = mask(&pick_a, |m| 1.0 - m);
            Ok(vec![
                if want(0) { Some(g.mul(&pick_a)?) } else { None },
                if want(1) { Some(g.mul(&pick_b)?) } else { None },
            ])
        }
        Op::BroadcastTo => one(reduce_to(g, x[0].shape())),
        Op::Scale(c) => one(g.scale(*c)),
        Op::AddScalar(_) => Ok(vec![Some(g.clone())]),
        Op::LeakyRelu(s) => one(g.mul(&mask(&x[0], |v| if v > 0.0 { 1.0 } else { *s }))),
        Op::Sigmoid => one(g.mul(&out.mul(&out.neg()?.add_scalar(1.0)?)?)),
        Op::Log => one(g.mul(&x[0].recip()?)),
        Op::Exp => one(g.mul(out)),
        Op::Sqrt => one(g.mul(&out.recip()?)?.scale(0.5)),
        Op::Recip => one(g.mul(&out.square()?)?.neg()),
        Op::Clamp(lo, hi) => one(g.mul(&mask(&x[0], |v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 }))),
        Op::Sum | Op::SumRows | Op::SumCols => one(g.broadcast_to(x[0].shape())),
        Op::Transpose => one(g.transpose()),
        Op::Reshape => one(g.reshape(x[0].shape())),
        Op::SpMM(adj) => one(Tensor::spmm(&adj.transpose(), g)),
        Op::GatherRows(idx) => one(g.scatter_add_rows(idx, x[0].rows())),
        Op::ScatterAddRows(idx) => one(g.gather_rows(idx)),
        Op::SliceCols(start) => one(g.pad_cols(*start, x[0].cols())),
        Op::PadCols(start) => one(g.slice_cols(*start, x[0].cols())),
        Op::ConcatCols => {
            let mut off = 0;
            let mut res = Vec::with_capacity(x.len());
            for (k, xi) in x.iter().enumerate() {
                res.push(if want(k) { Some(g.slice_cols(off, xi.cols())?) } else { None });
                off += xi.cols();
            }
            Ok(res)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::row_vector(&[1.0, 2.0, 3.0]));
        let loss = x.square().unwrap().sum().unwrap();
        let g = backward(&loss, &[x], false).unwrap();
        assert_eq!(g[0].data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn second_derivative_of_cube() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0));
        let cube = x.mul(&x).unwrap().mul(&x).unwrap().sum().unwrap();
        let g = backward(&cube, &[x.clone()], true).unwrap().remove(0);
        assert_eq!(g.item(), 12.0);
        assert!(g.requires_grad());
        let gg = backward(&g, &[x], false).unwrap().remove(0);
        assert_eq!(gg.item(), 12.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::row_vector(&[1.0, 2.0]));
        let y = x.scale(2.0).unwrap();
        assert!(matches!(backward(&y, &[x], false), Err(TensorError::Contract(_))));
    }

    #[test]
    fn unrelated_parameter_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::row_vector(&[1.0, 2.0]));
        let unused = tape.leaf(&Tensor::zeros([2, 2]));
        let loss = x.sum().unwrap();
        let g = backward(&loss, &[x, unused], false).unwrap();
        assert_eq!(g[1].data(), &[0.0; 4]);
    }

    #[test]
    fn first_order_backward_does_not_grow_tape() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let loss = w.matmul(&w).unwrap().sigmoid().unwrap().sum().unwrap();
        let before = tape.len();
        backward(&loss, &[w], false).unwrap();
        assert_eq!(tape.len(), before);
        assert!(tape.is_topological());
        tape.replay().unwrap();
    }

    #[test]
    fn mixed_tapes_are_rejected() {
        let a = Tape::new().leaf(&Tensor::scalar(1.0));
        let b = Tape::new().leaf(&Tensor::scalar(1.0));
        assert!(matches!(a.add(&b), Err(TensorError::TapeMismatch)));
    }
}
