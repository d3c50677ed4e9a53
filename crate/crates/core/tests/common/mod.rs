//! Independent numeric oracles shared by the integration suites.
#![allow(dead_code)]

use std::sync::Arc;

use coast::data::Dataset;
use coast::tensor::{backward, SparseMatrix, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite differences of `f` at each input, one coordinate at a time.
pub fn finite_diff(inputs: &[Tensor], h: f64, f: &dyn Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let bump = |delta: f64| {
                let mut xs: Vec<Tensor> = inputs.to_vec();
                let mut d = xs[k].to_vec();
                d[i] += delta;
                xs[k] = Tensor::new(xs[k].shape(), d).unwrap();
                f(&xs)
            };
            g.push((bump(h) - bump(-h)) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

/// Reverse-mode gradients of the scalar returned by `f` (which builds on tracked inputs).
pub fn autodiff(inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> Tensor) -> Vec<Vec<f64>> {
    let tape = Tape::new();
    let xs: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&xs);
    backward(&loss, &xs, false).unwrap().into_iter().map(|g| g.to_vec()).collect()
}

/// Largest `|a - b| / (|b| + 1e-8)` over all coordinates.
pub fn max_rel_err(ad: &[Vec<f64>], fd: &[Vec<f64>]) -> f64 {
    ad.iter().flatten().zip(fd.iter().flatten()).map(|(a, b)| (a - b).abs() / (b.abs() + 1e-8)).fold(0.0, f64::max)
}

pub type OpFn = Box<dyn Fn(&[Tensor]) -> Tensor>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

fn rand_in(shape: [usize; 2], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(shape, (0..shape[0] * shape[1]).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Wraps an op into a scalar by a fixed random projection of its output.
fn project(out: Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_in(out.shape(), -1.0, 1.0, &mut rng);
    out.mul(&r).unwrap().sum().unwrap()
}

/// One case per registered tensor op (plus the composites built on them).
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = |lo: f64, hi: f64, shape: [usize; 2]| rand_in(shape, lo, hi, &mut rng);
    let mut cases: Vec<OpCase> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($inp:expr),*], $f:expr) => {
            cases.push(OpCase { name: $name, inputs: vec![$($inp),*], f: Box::new(move |x: &[Tensor]| project($f(x), 99)) });
        };
    }
    case!("matmul", [c(-2., 2., [3, 4]), c(-2., 2., [4, 2])], |x: &[Tensor]| x[0].matmul(&x[1]).unwrap());
    case!("matmul_ta", [c(-2., 2., [4, 3]), c(-2., 2., [4, 2])], |x: &[Tensor]| x[0]
        .matmul_t(&x[1], true, false)
        .unwrap());
    case!("matmul_tb", [c(-2., 2., [3, 4]), c(-2., 2., [2, 4])], |x: &[Tensor]| x[0]
        .matmul_t(&x[1], false, true)
        .unwrap());
    case!("matmul_tab", [c(-2., 2., [4, 3]), c(-2., 2., [2, 4])], |x: &[Tensor]| x[0]
        .matmul_t(&x[1], true, true)
        .unwrap());
    case!("add", [c(-2., 2., [3, 3]), c(-2., 2., [3, 3])], |x: &[Tensor]| x[0].add(&x[1]).unwrap());
    case!("add_row_broadcast", [c(-2., 2., [3, 4]), c(-2., 2., [1, 4])], |x: &[Tensor]| x[0].add(&x[1]).unwrap());
    case!("mul_col_broadcast", [c(-2., 2., [3, 4]), c(-2., 2., [3, 1])], |x: &[Tensor]| x[0].mul(&x[1]).unwrap());
    case!("sub", [c(-2., 2., [2, 3]), c(-2., 2., [2, 3])], |x: &[Tensor]| x[0].sub(&x[1]).unwrap());
    case!("mul", [c(-2., 2., [2, 3]), c(-2., 2., [2, 3])], |x: &[Tensor]| x[0].mul(&x[1]).unwrap());
    case!("maximum", [c(-2., 2., [3, 3]), c(-2., 2., [3, 3])], |x: &[Tensor]| x[0].maximum(&x[1]).unwrap());
    case!("broadcast_to", [c(-2., 2., [1, 1])], |x: &[Tensor]| x[0].broadcast_to([2, 3]).unwrap());
    case!("scale", [c(-2., 2., [2, 3])], |x: &[Tensor]| x[0].scale(-1.7).unwrap());
    case!("add_scalar", [c(-2., 2., [2, 3])], |x: &[Tensor]| x[0].add_scalar(0.3).unwrap());
    case!("leaky_relu", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].leaky_relu(0.01).unwrap());
    case!("relu", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].relu().unwrap());
    case!("sigmoid", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].sigmoid().unwrap());
    case!("log", [c(0.2, 2., [3, 4])], |x: &[Tensor]| x[0].log().unwrap());
    case!("exp", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].exp().unwrap());
    case!("sqrt", [c(0.2, 2., [3, 4])], |x: &[Tensor]| x[0].sqrt().unwrap());
    case!("recip", [c(0.2, 2., [3, 4])], |x: &[Tensor]| x[0].recip().unwrap());
    case!("clamp", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].clamp(-1.0, 1.0).unwrap());
    case!("sum", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].sum().unwrap());
    case!("mean", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].mean().unwrap());
    case!("sum_rows", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].sum_rows().unwrap());
    case!("sum_cols", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].sum_cols().unwrap());
    case!("transpose", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].transpose().unwrap());
    case!("reshape", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].reshape([2, 6]).unwrap());
    let adj = Arc::new(
        SparseMatrix::from_triplets(4, 5, &[(0, 1, 0.5), (1, 0, -1.2), (1, 4, 2.0), (3, 3, 0.7), (3, 0, 1.1)]).unwrap(),
    );
    case!("sparse_dense_matmul", [c(-2., 2., [5, 3])], |x: &[Tensor]| Tensor::spmm(&adj.clone(), &x[0]).unwrap());
    case!("gather_rows", [c(-2., 2., [4, 3])], |x: &[Tensor]| x[0].gather_rows(&[2, 0, 2, 3]).unwrap());
    case!("scatter_add_rows", [c(-2., 2., [4, 3])], |x: &[Tensor]| x[0].scatter_add_rows(&[1, 1, 0, 2], 3).unwrap());
    case!("slice_cols", [c(-2., 2., [3, 5])], |x: &[Tensor]| x[0].slice_cols(1, 3).unwrap());
    case!("pad_cols", [c(-2., 2., [3, 2])], |x: &[Tensor]| x[0].pad_cols(1, 5).unwrap());
    case!("concat_cols", [c(-2., 2., [3, 2]), c(-2., 2., [3, 3])], |x: &[Tensor]| Tensor::concat_cols(&[
        x[0].clone(),
        x[1].clone()
    ])
    .unwrap());
    case!("div", [c(-2., 2., [2, 3]), c(0.5, 2., [2, 3])], |x: &[Tensor]| x[0].div(&x[1]).unwrap());
    case!("row_dot", [c(-2., 2., [3, 4]), c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].row_dot(&x[1]).unwrap());
    case!("l2_normalize_rows", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].l2_normalize_rows(1e-12).unwrap());
    case!("log_softmax_rows", [c(-2., 2., [3, 4])], |x: &[Tensor]| x[0].log_softmax_rows().unwrap());
    cases
}

/// `f(θ) = gᵀg` with `g = ∇θ L`, `L` the mean BCE of a 2-layer ReLU MLP.
/// Returns `(inputs, L builder)`; the inputs are `[W1, b1, W2, b2]`.
pub fn mlp_bce_problem(seed: u64) -> (Vec<Tensor>, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = vec![
        rand_in([4, 6], -1.0, 1.0, &mut rng),
        rand_in([1, 6], -0.5, 0.5, &mut rng),
        rand_in([6, 1], -1.0, 1.0, &mut rng),
        rand_in([1, 1], -0.5, 0.5, &mut rng),
    ];
    let x = rand_in([10, 4], -2.0, 2.0, &mut rng);
    let y = Tensor::new([10, 1], (0..10).map(|i| (i % 2) as f64).collect()).unwrap();
    (params, x, y)
}

pub fn mlp_bce_loss(p: &[Tensor], x: &Tensor, y: &Tensor) -> Tensor {
    let h = x.matmul(&p[0]).unwrap().add(&p[1]).unwrap().relu().unwrap();
    let prob = h.matmul(&p[2]).unwrap().add(&p[3]).unwrap().sigmoid().unwrap();
    let pos = y.mul(&prob.log().unwrap()).unwrap();
    let neg = y
        .neg()
        .unwrap()
        .add_scalar(1.0)
        .unwrap()
        .mul(&prob.neg().unwrap().add_scalar(1.0).unwrap().log().unwrap())
        .unwrap();
    pos.add(&neg).unwrap().mean().unwrap().neg().unwrap()
}

/// `gᵀg` evaluated without recording (for finite differences).
pub fn grad_norm_sq(p: &[Tensor], x: &Tensor, y: &Tensor) -> f64 {
    let tape = Tape::new();
    let xs: Vec<Tensor> = p.iter().map(|t| tape.leaf(t)).collect();
    let l = mlp_bce_loss(&xs, x, y);
    backward(&l, &xs, false).unwrap().iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum()
}

/// Reverse-over-reverse gradient of `gᵀg`.
pub fn grad_norm_sq_autodiff(p: &[Tensor], x: &Tensor, y: &Tensor) -> Vec<Vec<f64>> {
    let tape = Tape::new();
    let xs: Vec<Tensor> = p.iter().map(|t| tape.leaf(t)).collect();
    let l = mlp_bce_loss(&xs, x, y);
    let gs = backward(&l, &xs, true).unwrap();
    let mut f = gs[0].square().unwrap().sum().unwrap();
    for g in &gs[1..] {
        f = f.add(&g.square().unwrap().sum().unwrap()).unwrap();
    }
    backward(&f, &xs, false).unwrap().into_iter().map(|g| g.to_vec()).collect()
}

pub fn dataset(s: Vec<Vec<usize>>, t: Vec<Vec<usize>>, n_items: [usize; 2]) -> Dataset {
    let nu = s.len();
    let ts = |p: &Vec<Vec<usize>>| p.iter().map(|r| vec![None; r.len()]).collect();
    Dataset {
        users: (0..nu).map(|u| format!("u{u}")).collect(),
        items: [(0..n_items[0]).map(|i| format!("s{i}")).collect(), (0..n_items[1]).map(|i| format!("t{i}")).collect()],
        timestamps: [ts(&s), ts(&t)],
        positives: [s, t],
        withheld: [vec![Vec::new(); nu], vec![Vec::new(); nu]],
        user_features: Tensor::zeros([nu, 1]),
        item_features: [Tensor::zeros([n_items[0], 1]), Tensor::zeros([n_items[1], 1])],
    }
}

pub fn random_dataset(seed: u64, nu: usize, ni: [usize; 2], p: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = [vec![Vec::new(); nu], vec![Vec::new(); nu]];
    for u in 0..nu {
        for d in 0..2 {
            for i in 0..ni[d] {
                if rng.gen_bool(p) {
                    pos[d][u].push(i);
                }
            }
        }
        if pos[0][u].is_empty() && pos[1][u].is_empty() {
            pos[0][u].push(rng.gen_range(0..ni[0]));
        }
    }
    let [s, t] = pos;
    dataset(s, t, ni)
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.01 * x
    }
}

/// One propagation layer accumulated edge by edge straight from the dataset:
/// degrees are counted here, messages are `norm (e_v W1 + (e_v ⊙ e_u) W_d)`,
/// plus the self message `e_u W1`, then LeakyReLU. Users occupy nodes
/// `0..n_users`, followed by S items at `s_off` and T items at `t_off`.
pub fn nodewise_layer(
    ds: &Dataset,
    e: &Tensor,
    w: [&Tensor; 3],
    interactions: bool,
    s_off: usize,
    t_off: usize,
) -> Vec<Vec<f64>> {
    let n = e.rows();
    let dim = w[0].cols();
    let matvec = |x: &[f64], m: &Tensor| -> Vec<f64> {
        (0..dim).map(|j| (0..x.len()).map(|k| x[k] * m.data()[k * dim + j]).sum()).collect()
    };
    let mut deg = vec![0usize; n];
    let mut edges = Vec::new();
    for (d, off) in [(0, s_off), (1, t_off)] {
        for (u, items) in ds.positives[d].iter().enumerate() {
            for &i in items {
                deg[u] += 1;
                deg[off + i] += 1;
                edges.push((u, off + i, d));
            }
        }
    }
    let mut acc: Vec<Vec<f64>> = (0..n).map(|u| matvec(e.row(u), w[0])).collect();
    let mut send = |to: usize, from: usize, d: usize| {
        let norm = 1.0 / ((deg[to] * deg[from]) as f64).sqrt();
        let mut m = matvec(e.row(from), w[0]);
        if interactions {
            let had: Vec<f64> = e.row(from).iter().zip(e.row(to)).map(|(a, b)| a * b).collect();
            for (x, y) in m.iter_mut().zip(matvec(&had, w[1 + d])) {
                *x += y;
            }
        }
        for (a, x) in acc[to].iter_mut().zip(m) {
            *a += norm * x;
        }
    };
    for &(u, v, d) in &edges {
        send(u, v, d);
        send(v, u, d);
    }
    acc.into_iter().map(|r| r.into_iter().map(leaky).collect()).collect()
}
