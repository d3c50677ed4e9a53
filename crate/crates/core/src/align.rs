//! Interest alignment for overlapping users.
//!
//! *User-user*: each overlapping user gets one view per domain, an attention
//! pooled summary of its second-order neighbors there. Views are projected onto
//! the unit sphere, softly assigned to `K` prototypes with Sinkhorn-Knopp
//! equipartition, and each view is trained to predict the other's assignment.
//!
//! *User-item*: the gradients of each domain's loss with respect to its own user
//! tower are pushed toward the same direction by penalizing `1 - cos(g_S, g_T)`.

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Domain;
use crate::graph::{CrossDomainGraph, TwoHopIndex};
use crate::tensor::{backward_params, ParamSet, Tensor, TensorError};
use crate::towers::{init_mlp, mlp_forward, MIN_NORM};

/// Additive logit for padded neighbor slots.
const PAD_LOGIT: f64 = -1e30;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tower(#[from] crate::towers::TowerError),
}

pub type Result<T> = std::result::Result<T, AlignError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub prototypes: usize,
    pub proj_dim: usize,
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_eps: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { prototypes: 256, proj_dim: 64, temperature: 0.1, sinkhorn_iters: 3, sinkhorn_eps: 0.05 }
    }
}

pub const PROTOTYPES: &str = "align.prototypes";

pub fn extractor_prefix(d: Domain) -> String {
    format!("align.extract_{d}")
}

/// Extractors `F_S`, `F_T` (`input_dim → 2·input_dim → proj_dim`) and unit-norm prototypes.
pub fn init_align_params(cfg: &AlignConfig, input_dim: usize, rng: &mut impl Rng) -> Result<ParamSet> {
    if cfg.prototypes < 2 || !(cfg.temperature > 0.0) {
        return Err(AlignError::Contract("need at least 2 prototypes and a positive temperature".into()));
    }
    let mut ps = ParamSet::new();
    for d in Domain::ALL {
        init_mlp(&mut ps, &extractor_prefix(d), &[input_dim, 2 * input_dim, cfg.proj_dim], rng)?;
    }
    let c = Tensor::randn([cfg.prototypes, cfg.proj_dim], 1.0, rng);
    ps.insert(PROTOTYPES, normalize_rows(&c))?;
    Ok(ps)
}

/// Unit-length rows of an untracked tensor; zero rows stay zero.
pub fn normalize_rows(t: &Tensor) -> Tensor {
    let cols = t.cols().max(1);
    let mut v = t.to_vec();
    for row in v.chunks_exact_mut(cols) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    Tensor::new(t.shape(), v).expect("same shape")
}

/// Attention-pooled second-order views of `users` (overlapping, dataset indices)
/// in domain `d`, taken from the node table `nodes`. Each view is
/// `Σ_i softmax_i(⟨e_i, e_u⟩) e_i` over the user's neighbors; a user without
/// neighbors falls back to its own embedding.
pub fn build_views(
    nodes: &Tensor,
    g: &CrossDomainGraph,
    index: &TwoHopIndex,
    users: &[usize],
    d: Domain,
) -> Result<Tensor> {
    let di = d.index();
    let mut lists = Vec::with_capacity(users.len());
    for &u in users {
        let list = index.of(u, d).ok_or_else(|| AlignError::Contract(format!("user {u} is not overlapping")))?;
        lists.push(list);
    }
    let width = lists.iter().map(|l| l.len()).max().unwrap_or(0).max(1);
    let b = users.len();
    let mut nbr = Vec::with_capacity(b * width);
    let mut own = Vec::with_capacity(b * width);
    let mut mask = Vec::with_capacity(b * width);
    let mut owner = Vec::with_capacity(b * width);
    for (k, (&u, list)) in users.iter().zip(&lists).enumerate() {
        let self_node = g.user_node[di][u];
        for slot in 0..width {
            match list.get(slot) {
                Some(&w) => {
                    nbr.push(w);
                    mask.push(0.0);
                }
                // An empty neighborhood keeps one live slot pointing at the user itself.
                None => {
                    nbr.push(self_node);
                    mask.push(if list.is_empty() && slot == 0 { 0.0 } else { PAD_LOGIT });
                }
            }
            own.push(self_node);
            owner.push(k);
        }
    }
    let e_nbr = nodes.gather_rows(&nbr)?;
    let e_own = nodes.gather_rows(&own)?;
    let logits = e_nbr.row_dot(&e_own)?.reshape([b, width])?.add(&Tensor::new([b, width], mask)?)?;
    let alpha = logits.softmax_rows()?.reshape([b * width, 1])?;
    Ok(e_nbr.mul(&alpha)?.scatter_add_rows(&owner, b)?)
}

/// Sinkhorn-Knopp transport plan of total mass 1 for a `B×K` score matrix:
/// starting from `exp(scores/eps)`, alternately normalize columns to mass `1/K`
/// and rows to mass `1/B`.
pub fn sinkhorn_plan(scores: &Tensor, eps: f64, iters: usize) -> Result<Tensor> {
    if !scores.is_finite() {
        return Err(AlignError::NonFinite("sinkhorn_codes"));
    }
    let [b, k] = scores.shape();
    if b == 0 || k == 0 {
        return Err(AlignError::Contract("sinkhorn_codes needs a non-empty score matrix".into()));
    }
    let max = scores.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = scores.data().iter().map(|s| ((s - max) / eps).exp()).collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= total);
    for _ in 0..iters {
        let mut col = vec![0.0; k];
        for row in q.chunks_exact(k) {
            for (c, x) in col.iter_mut().zip(row) {
                *c += x;
            }
        }
        for row in q.chunks_exact_mut(k) {
            for (x, c) in row.iter_mut().zip(&col) {
                *x = if *c > 0.0 { *x / c / k as f64 } else { 0.0 };
            }
        }
        for row in q.chunks_exact_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x = if s > 0.0 { *x / s / b as f64 } else { 1.0 / (k * b) as f64 });
        }
    }
    Ok(Tensor::new([b, k], q)?)
}

/// Codes: the transport plan scaled so every row sums to one. The result is a
/// constant (no gradient flows through it).
pub fn sinkhorn_codes(scores: &Tensor, eps: f64, iters: usize) -> Result<Tensor> {
    let plan = sinkhorn_plan(scores, eps, iters)?;
    let b = plan.rows() as f64;
    Ok(Tensor::new(plan.shape(), plan.data().iter().map(|x| x * b).collect())?)
}

/// `ℓ(z, q)`: mean over rows of `-Σ_k q^(k) log p^(k)`.
pub fn swap_term(q: &Tensor, log_p: &Tensor) -> Result<Tensor> {
    let b = q.rows().max(1) as f64;
    Ok(q.mul(log_p)?.sum()?.scale(-1.0 / b)?)
}

/// `ℓ(z_T, q_S) + ℓ(z_S, q_T)`.
pub fn swapped_prediction_loss(q_s: &Tensor, log_p_t: &Tensor, q_t: &Tensor, log_p_s: &Tensor) -> Result<Tensor> {
    Ok(swap_term(q_s, log_p_t)?.add(&swap_term(q_t, log_p_s)?)?)
}

/// Projected unit-norm view features `z_d`.
pub fn project(ps: &ParamSet, view: &Tensor, d: Domain) -> Result<Tensor> {
    Ok(mlp_forward(ps, &extractor_prefix(d), view)?.l2_normalize_rows(MIN_NORM)?)
}

/// User-user alignment over the overlapping users of a batch. Returns zero
/// (untracked) when fewer than two users are present.
pub fn user_user_loss(
    ps: &ParamSet,
    cfg: &AlignConfig,
    nodes: &Tensor,
    g: &CrossDomainGraph,
    index: &TwoHopIndex,
    users: &[usize],
) -> Result<Tensor> {
    if users.len() < 2 {
        debug!("user-user alignment skipped: {} overlapping users in batch", users.len());
        return Ok(Tensor::scalar(0.0));
    }
    let c = ps.expect(PROTOTYPES)?;
    let mut z = Vec::with_capacity(2);
    for d in Domain::ALL {
        let view = build_views(nodes, g, index, users, d)?;
        z.push(project(ps, &view, d)?);
    }
    let logits_s = z[0].matmul_t(c, false, true)?;
    let logits_t = z[1].matmul_t(c, false, true)?;
    let q_s = sinkhorn_codes(&logits_s.detach(), cfg.sinkhorn_eps, cfg.sinkhorn_iters)?;
    let q_t = sinkhorn_codes(&logits_t.detach(), cfg.sinkhorn_eps, cfg.sinkhorn_iters)?;
    let inv_tau = 1.0 / cfg.temperature;
    let log_p_s = logits_s.scale(inv_tau)?.log_softmax_rows()?;
    let log_p_t = logits_t.scale(inv_tau)?.log_softmax_rows()?;
    swapped_prediction_loss(&q_s, &log_p_t, &q_t, &log_p_s)
}

/// Flattened gradient of `loss` with respect to `wrt`, recorded so it can be
/// differentiated again.
pub fn grad_vector(loss: &Tensor, wrt: &ParamSet) -> Result<Tensor> {
    if wrt.is_empty() {
        return Err(AlignError::Contract("gradient over an empty parameter set".into()));
    }
    Ok(backward_params(loss, wrt, true)?.flatten_tensor()?)
}

/// `1 - cos(g_S, g_T)`. Both zero gives 0; exactly one zero gives 1 (cosine taken as 0).
pub fn user_item_loss(g_s: &Tensor, g_t: &Tensor) -> Result<Tensor> {
    if g_s.len() != g_t.len() {
        return Err(AlignError::Contract(format!("gradient lengths {} and {}", g_s.len(), g_t.len())));
    }
    let ns = g_s.square()?.sum()?;
    let nt = g_t.square()?.sum()?;
    match (ns.item() > 0.0, nt.item() > 0.0) {
        (false, false) => {
            debug!("user-item alignment: both gradients vanish");
            return Ok(Tensor::scalar(0.0));
        }
        (true, true) => {}
        _ => return Ok(Tensor::scalar(1.0)),
    }
    let dot = g_s.mul(g_t)?.sum()?;
    let cos = dot.div(&ns.mul(&nt)?.sqrt()?)?;
    Ok(cos.neg()?.add_scalar(1.0)?)
}
