//! Dual-tower scoring. Each domain has a user tower and an item tower; a pair
//! scores `(cos(F^u(e_u), F^v(e_v)) + 1) / 2`, clamped away from 0 and 1, and is
//! trained with binary cross-entropy plus an L2 penalty on the embeddings.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Batch, Domain};
use crate::tensor::{ParamSet, Tensor, TensorError};

/// Clamp for predicted probabilities.
pub const PROB_EPS: f64 = 1e-7;
/// Tower outputs shorter than this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;
/// Layer widths as multiples of the input dimension.
pub const WIDTH_MULTIPLIERS: [usize; 7] = [1, 2, 4, 8, 4, 2, 1];

#[derive(Debug, Error)]
pub enum TowerError {
    #[error("tower {0} produced a zero-norm output")]
    DegenerateOutput(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TowerError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    User,
    Item,
}

/// Which user-tower parameters the alignment gradient covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    #[default]
    All,
    LastLayer,
}

pub fn tower_prefix(side: Side, d: Domain) -> String {
    match side {
        Side::User => format!("tower.user_{d}"),
        Side::Item => format!("tower.item_{d}"),
    }
}

/// Adds an MLP `prefix.{l}.w` / `prefix.{l}.b` with the given widths.
pub fn init_mlp(ps: &mut ParamSet, prefix: &str, widths: &[usize], rng: &mut impl Rng) -> Result<()> {
    for (l, w) in widths.windows(2).enumerate() {
        ps.insert(format!("{prefix}.{l}.w"), Tensor::kaiming_uniform([w[0], w[1]], rng))?;
        ps.insert(format!("{prefix}.{l}.b"), Tensor::zeros([1, w[1]]))?;
    }
    Ok(())
}

/// Raw MLP output: ReLU between layers, none after the last.
pub fn mlp_forward(ps: &ParamSet, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let mut h = x.clone();
    let mut l = 0;
    while let Some(w) = ps.get(&format!("{prefix}.{l}.w")) {
        if l > 0 {
            h = h.relu()?;
        }
        h = h.matmul(w)?.add(ps.expect(&format!("{prefix}.{l}.b"))?)?;
        l += 1;
    }
    if l == 0 {
        return Err(TowerError::Contract(format!("no layers under {prefix}")));
    }
    Ok(h)
}

pub fn mlp_depth(ps: &ParamSet, prefix: &str) -> usize {
    (0..).take_while(|l| ps.get(&format!("{prefix}.{l}.w")).is_some()).count()
}

pub fn init_tower_params(input_dim: usize, rng: &mut impl Rng) -> Result<ParamSet> {
    let widths: Vec<usize> = WIDTH_MULTIPLIERS.iter().map(|m| m * input_dim).collect();
    let mut ps = ParamSet::new();
    for d in Domain::ALL {
        for side in [Side::User, Side::Item] {
            init_mlp(&mut ps, &tower_prefix(side, d), &widths, rng)?;
        }
    }
    Ok(ps)
}

/// Tower output with rows scaled to unit length.
pub fn tower_forward(ps: &ParamSet, side: Side, d: Domain, x: &Tensor) -> Result<Tensor> {
    let prefix = tower_prefix(side, d);
    let out = mlp_forward(ps, &prefix, x)?;
    out.l2_normalize_rows(MIN_NORM).map_err(|e| match e {
        TensorError::Domain { .. } => TowerError::DegenerateOutput(prefix),
        other => other.into(),
    })
}

/// The user-tower parameters of domain `d` covered by `scope`, in a fixed order
/// that is the same for both domains.
pub fn user_tower_params(ps: &ParamSet, d: Domain, scope: GradScope) -> Result<ParamSet> {
    let prefix = tower_prefix(Side::User, d);
    let depth = mlp_depth(ps, &prefix);
    let first = match scope {
        GradScope::All => 0,
        GradScope::LastLayer => depth.saturating_sub(1),
    };
    let mut out = ParamSet::new();
    for l in first..depth {
        for p in ["w", "b"] {
            let name = format!("{prefix}.{l}.{p}");
            out.insert(name.clone(), ps.expect(&name)?.clone())?;
        }
    }
    Ok(out)
}

/// `(cos + 1)/2` of row-aligned unit vectors, clamped to `[ε, 1-ε]`; `m×1`.
pub fn scores(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    Ok(u.row_dot(v)?.add_scalar(1.0)?.scale(0.5)?.clamp(PROB_EPS, 1.0 - PROB_EPS)?)
}

/// Score of one pair of propagated embeddings.
pub fn predict(ps: &ParamSet, d: Domain, e_u: &[f64], e_v: &[f64]) -> Result<f64> {
    let u = tower_forward(ps, Side::User, d, &Tensor::row_vector(e_u))?;
    let v = tower_forward(ps, Side::Item, d, &Tensor::row_vector(e_v))?;
    Ok(scores(&u, &v)?.item())
}

/// Mean binary cross-entropy of predictions `y_hat` (`m×1`) against labels.
pub fn bce(y_hat: &Tensor, labels: &[f64]) -> Result<Tensor> {
    let y = Tensor::new([labels.len(), 1], labels.to_vec())?;
    let one_minus_y = Tensor::new([labels.len(), 1], labels.iter().map(|l| 1.0 - l).collect())?;
    let pos = y.mul(&y_hat.log()?)?;
    let neg = one_minus_y.mul(&y_hat.neg()?.add_scalar(1.0)?.log()?)?;
    Ok(pos.add(&neg)?.mean()?.neg()?)
}

/// Unique entities of a batch with each example's position among them.
#[derive(Clone, Debug, Default)]
pub struct BatchIndex {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub user_pos: Vec<usize>,
    pub item_pos: Vec<usize>,
    pub labels: Vec<f64>,
}

impl BatchIndex {
    pub fn new<'a>(examples: impl Iterator<Item = &'a crate::data::Example>) -> Self {
        let mut idx = BatchIndex::default();
        let mut um: HashMap<usize, usize> = HashMap::new();
        let mut im: HashMap<usize, usize> = HashMap::new();
        for e in examples {
            let up = *um.entry(e.user).or_insert_with(|| {
                idx.users.push(e.user);
                idx.users.len() - 1
            });
            let ip = *im.entry(e.item).or_insert_with(|| {
                idx.items.push(e.item);
                idx.items.len() - 1
            });
            idx.user_pos.push(up);
            idx.item_pos.push(ip);
            idx.labels.push(e.label);
        }
        idx
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-domain forward results reused by the alignment losses.
#[derive(Clone, Debug)]
pub struct DomainForward {
    pub index: BatchIndex,
    pub user_out: Tensor,
    pub item_out: Tensor,
    pub y_hat: Tensor,
    pub bce: Tensor,
}

#[derive(Clone, Debug)]
pub struct SupervisedLoss {
    pub total: Tensor,
    pub regularizer: Tensor,
    pub domains: [Option<DomainForward>; 2],
}

/// Mean BCE per domain, summed, plus `lambda1` times the mean squared norm of
/// the batch's unique user and item embeddings. `users` is `n_users × D'` and
/// `items[d]` is `n_items_d × D'`.
pub fn supervised_loss(
    ps: &ParamSet,
    users: &Tensor,
    items: &[Tensor; 2],
    batch: &Batch,
    lambda1: f64,
) -> Result<SupervisedLoss> {
    let mut total = Tensor::scalar(0.0);
    let mut domains: [Option<DomainForward>; 2] = [None, None];
    let mut item_sq: Vec<Tensor> = Vec::new();
    let mut n_items = 0;
    for d in Domain::ALL {
        let index = BatchIndex::new(batch.in_domain(d));
        if index.is_empty() {
            continue;
        }
        let eu = users.gather_rows(&index.users)?;
        let ev = items[d.index()].gather_rows(&index.items)?;
        let user_out = tower_forward(ps, Side::User, d, &eu)?;
        let item_out = tower_forward(ps, Side::Item, d, &ev)?;
        let y_hat = scores(&user_out.gather_rows(&index.user_pos)?, &item_out.gather_rows(&index.item_pos)?)?;
        let loss = bce(&y_hat, &index.labels)?;
        total = total.add(&loss)?;
        item_sq.push(ev.square()?.sum()?);
        n_items += index.items.len();
        domains[d.index()] = Some(DomainForward { index, user_out, item_out, y_hat, bce: loss });
    }
    let mut regularizer = Tensor::scalar(0.0);
    if lambda1 != 0.0 && !batch.is_empty() {
        let mut seen: Vec<usize> = batch.examples.iter().map(|e| e.user).collect();
        seen.sort_unstable();
        seen.dedup();
        let user_term = users.gather_rows(&seen)?.square()?.sum()?.scale(1.0 / seen.len() as f64)?;
        let mut item_term = Tensor::scalar(0.0);
        for t in &item_sq {
            item_term = item_term.add(t)?;
        }
        regularizer = user_term.add(&item_term.scale(1.0 / n_items.max(1) as f64)?)?.scale(lambda1)?;
        total = total.add(&regularizer)?;
    }
    Ok(SupervisedLoss { total, regularizer, domains })
}
