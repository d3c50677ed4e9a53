//! Cross-domain graph convolution.
//!
//! A neighbor `v` sends `u` the message
//! `norm(u,v) (e_v W1 + (e_v ⊙ e_u) W_d)` where `W_d` is `W2` on S-edges and
//! `W3` on T-edges, and `norm(u,v)` is the normalized adjacency entry. Adding the
//! self message `e_u W1` and applying LeakyReLU gives, for all nodes at once,
//!
//! `E' = LeakyReLU((L + I) E W1 + ((L_S E) ⊙ E) W2 + ((L_T E) ⊙ E) W3)`.
//!
//! The final representation concatenates the outputs of every layer, `E0`
//! included.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Domain;
use crate::graph::CrossDomainGraph;
use crate::tensor::{ParamSet, Tensor, TensorError, LEAKY_RELU_SLOPE};

#[derive(Debug, Error)]
pub enum GcnError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GcnError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub dim: usize,
    pub layers: usize,
    /// Keep the element-wise interaction terms (`W2`, `W3`).
    pub interaction_terms: bool,
    /// Neighbor messages carry `e_u W1` (the receiver) instead of `e_v W1`.
    pub literal_first_term: bool,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self { dim: 64, layers: 2, interaction_terms: true, literal_first_term: false }
    }
}

impl GcnConfig {
    pub fn output_dim(&self) -> usize {
        self.dim * (self.layers + 1)
    }
}

pub fn weight_name(layer: usize, w: usize) -> String {
    format!("gcn.{layer}.w{w}")
}

pub fn init_gcn_params(cfg: &GcnConfig, rng: &mut impl Rng) -> Result<ParamSet> {
    if cfg.layers > 4 {
        return Err(GcnError::Contract(format!("{} layers requested, at most 4 supported", cfg.layers)));
    }
    let mut ps = ParamSet::new();
    for l in 0..cfg.layers {
        for w in 1..=3 {
            ps.insert(weight_name(l, w), Tensor::kaiming_uniform([cfg.dim, cfg.dim], rng))?;
        }
    }
    Ok(ps)
}

/// The message `u ← v` at one layer, computed directly from its definition.
pub fn message(
    g: &CrossDomainGraph,
    e: &Tensor,
    params: &ParamSet,
    cfg: &GcnConfig,
    layer: usize,
    u: usize,
    v: usize,
) -> Result<Vec<f64>> {
    let d = g.edge_type(u, v).ok_or_else(|| GcnError::Contract(format!("nodes {u} and {v} are not adjacent")))?;
    let norm = g.l.get(u, v);
    let (eu, ev) = (e.row(u), e.row(v));
    let w1 = params.expect(&weight_name(layer, 1))?;
    let wd = params.expect(&weight_name(layer, if d == Domain::S { 2 } else { 3 }))?;
    let first = if cfg.literal_first_term { eu } else { ev };
    let inter: Vec<f64> = eu.iter().zip(ev).map(|(a, b)| a * b).collect();
    let n = w1.cols();
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..w1.rows() {
            acc += first[k] * w1.data()[k * n + j];
            if cfg.interaction_terms {
                acc += inter[k] * wd.data()[k * n + j];
            }
        }
        *o = norm * acc;
    }
    Ok(out)
}

/// One layer in matrix form.
pub fn propagate_layer(
    e: &Tensor,
    g: &CrossDomainGraph,
    params: &ParamSet,
    cfg: &GcnConfig,
    layer: usize,
) -> Result<Tensor> {
    if e.rows() != g.n_nodes() || e.cols() != cfg.dim {
        return Err(GcnError::Tensor(TensorError::Shape {
            op: "propagate_layer",
            lhs: e.shape(),
            rhs: [g.n_nodes(), cfg.dim],
        }));
    }
    let w1 = params.expect(&weight_name(layer, 1))?;
    let mut pre = if cfg.literal_first_term {
        // Every neighbor message repeats the receiver: scale e_u W1 by 1 + Σ_v L(u,v).
        let scale: Vec<f64> = g.l.row_sums().iter().map(|s| 1.0 + s).collect();
        Tensor::new([e.rows(), 1], scale)?.mul(&e.matmul(w1)?)?
    } else {
        Tensor::spmm(&g.l, e)?.add(e)?.matmul(w1)?
    };
    if cfg.interaction_terms {
        for (d, w) in [(Domain::S, 2), (Domain::T, 3)] {
            let agg = Tensor::spmm(g.l_domain(d), e)?;
            pre = pre.add(&agg.mul(e)?.matmul(params.expect(&weight_name(layer, w))?)?)?;
        }
    }
    Ok(pre.leaky_relu(LEAKY_RELU_SLOPE)?)
}

/// Runs every layer from `e0` and concatenates `[E0 | E1 | ... | EL]`.
pub fn propagate(e0: &Tensor, g: &CrossDomainGraph, params: &ParamSet, cfg: &GcnConfig) -> Result<Tensor> {
    let mut outs = vec![e0.clone()];
    for l in 0..cfg.layers {
        let next = propagate_layer(outs.last().expect("non-empty"), g, params, cfg, l)?;
        outs.push(next);
    }
    if outs.len() == 1 {
        return Ok(e0.clone());
    }
    Ok(Tensor::concat_cols(&outs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::graph::build_graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Dataset {
        let (s, t) = (vec![vec![0], vec![0, 1]], vec![vec![0], vec![]]);
        let ts = |p: &Vec<Vec<usize>>| p.iter().map(|r| vec![None; r.len()]).collect();
        Dataset {
            users: vec!["a".into(), "b".into()],
            items: [vec!["s0".into(), "s1".into()], vec!["t0".into()]],
            timestamps: [ts(&s), ts(&t)],
            positives: [s, t],
            withheld: [vec![vec![], vec![]], vec![vec![], vec![]]],
            user_features: Tensor::zeros([2, 1]),
            item_features: [Tensor::zeros([2, 1]), Tensor::zeros([1, 1])],
        }
    }

    fn identity_params(dim: usize) -> ParamSet {
        let mut ps = ParamSet::new();
        for w in 1..=3 {
            ps.insert(weight_name(0, w), Tensor::eye(dim)).unwrap();
        }
        ps
    }

    #[test]
    fn ones_receiver_doubles_message() {
        let ds = Dataset { positives: [vec![vec![0]], vec![vec![]]], ..single() };
        let g = build_graph(&ds, false).unwrap();
        let e = Tensor::from_rows(&[&[1.0, 1.0], &[0.3, -0.7], &[0.0, 0.0]]);
        let cfg = GcnConfig { dim: 2, layers: 1, ..GcnConfig::default() };
        let m = message(&g, &e, &identity_params(2), &cfg, 0, 0, 1).unwrap();
        assert_eq!(m, vec![0.6, -1.4]);
    }

    fn single() -> Dataset {
        Dataset {
            users: vec!["a".into()],
            items: [vec!["s0".into()], vec!["t0".into()]],
            timestamps: [vec![vec![None]], vec![vec![]]],
            positives: [vec![vec![0]], vec![vec![]]],
            withheld: [vec![vec![]], vec![vec![]]],
            user_features: Tensor::zeros([1, 1]),
            item_features: [Tensor::zeros([1, 1]), Tensor::zeros([1, 1])],
        }
    }

    #[test]
    fn zero_receiver_on_t_edge_keeps_only_w1() {
        let g = build_graph(&toy(), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GcnConfig { dim: 3, layers: 1, ..GcnConfig::default() };
        let ps = init_gcn_params(&cfg, &mut rng).unwrap();
        let mut e = Tensor::randn([g.n_nodes(), 3], 1.0, &mut rng).to_vec();
        e[..3].fill(0.0);
        let e = Tensor::new([g.n_nodes(), 3], e).unwrap();
        let t0 = g.item_node(Domain::T, 0);
        let m = message(&g, &e, &ps, &cfg, 0, 0, t0).unwrap();
        let expect = Tensor::row_vector(e.row(t0)).matmul(ps.expect("gcn.0.w1").unwrap()).unwrap();
        let norm = g.l.get(0, t0);
        for (a, b) in m.iter().zip(expect.data()) {
            assert!((a - norm * b).abs() < 1e-15);
        }
        assert!(message(&g, &e, &ps, &cfg, 0, 0, 1).is_err());
    }

    #[test]
    fn empty_graph_identity_weights_is_identity() {
        let ds = single();
        let mut g = build_graph(&ds, false).unwrap();
        let n = g.n_nodes();
        g.l = std::sync::Arc::new(crate::tensor::SparseMatrix::empty(n, n));
        g.l_s = g.l.clone();
        g.l_t = g.l.clone();
        let cfg = GcnConfig { dim: 2, layers: 1, ..GcnConfig::default() };
        let e = Tensor::from_rows(&[&[0.5, 1.0], &[0.0, 2.0], &[3.0, 0.1]]);
        let out = propagate_layer(&e, &g, &identity_params(2), &cfg, 0).unwrap();
        assert_eq!(out.to_vec(), e.to_vec());
    }

    #[test]
    fn output_dim_counts_layers() {
        let g = build_graph(&toy(), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for layers in [0, 2] {
            let cfg = GcnConfig { dim: 4, layers, ..GcnConfig::default() };
            let ps = init_gcn_params(&cfg, &mut rng).unwrap();
            let e0 = Tensor::uniform([g.n_nodes(), 4], 1.0, &mut rng);
            let out = propagate(&e0, &g, &ps, &cfg).unwrap();
            assert_eq!(out.cols(), cfg.output_dim());
            assert!(out.is_finite());
            if layers == 0 {
                assert_eq!(out.to_vec(), e0.to_vec());
            }
        }
        assert_eq!(GcnConfig::default().output_dim(), 192);
    }

    #[test]
    fn no_interaction_terms_ignore_w2_w3() {
        let g = build_graph(&toy(), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = GcnConfig { dim: 3, layers: 2, interaction_terms: false, ..GcnConfig::default() };
        let ps = init_gcn_params(&cfg, &mut rng).unwrap();
        let e0 = Tensor::uniform([g.n_nodes(), 3], 1.0, &mut rng);
        let base = propagate(&e0, &g, &ps, &cfg).unwrap();
        let bumped = ps.map(|n, t| if n.ends_with("w1") { t.clone() } else { t.add_scalar(5.0).unwrap() });
        assert_eq!(propagate(&e0, &g, &bumped, &cfg).unwrap().to_vec(), base.to_vec());
    }
}
