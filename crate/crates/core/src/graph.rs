//! The unified cross-domain graph: one node per user (or per user and domain
//! when domains are kept apart), one node per item of either domain, and edges
//! typed by the domain of the interaction.
//!
//! Node layout is `[user nodes | S items | T items]`. Adjacency is normalized
//! symmetrically with total node degrees, `L = D^-1/2 A D^-1/2`, and split by
//! edge type into `L_S + L_T = L`. Because every item lives in one domain, the
//! entry for edge `(u, v)` equals `1/sqrt(|N_u| max(|N_v^S|,1) max(|N_v^T|,1))`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Domain, UserRole};
use crate::tensor::{ParamSet, SparseMatrix, Tensor, TensorError};

/// Default cap on second-order neighbors per user and domain.
pub const DEFAULT_MAX_NEIGHBORS: usize = 64;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Max-pools the per-domain embeddings of a user; a missing side passes the other through.
pub fn merge_user_embedding(e_s: Option<&[f64]>, e_t: Option<&[f64]>) -> Result<Vec<f64>> {
    match (e_s, e_t) {
        (Some(s), Some(t)) => {
            if s.len() != t.len() {
                return Err(GraphError::Contract(format!("embedding lengths {} and {}", s.len(), t.len())));
            }
            Ok(s.iter().zip(t).map(|(a, b)| a.max(*b)).collect())
        }
        (Some(s), None) => Ok(s.to_vec()),
        (None, Some(t)) => Ok(t.to_vec()),
        (None, None) => Err(GraphError::Contract("user has no embedding in either domain".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub user_nodes: usize,
    pub item_nodes: [usize; 2],
    pub edges: [usize; 2],
    pub overlap_users: usize,
    pub isolated_items: usize,
}

#[derive(Clone, Debug)]
pub struct CrossDomainGraph {
    pub n_users: usize,
    pub n_user_nodes: usize,
    pub n_items: [usize; 2],
    /// Graph node holding user `u`'s side of domain `d`. Identical across
    /// domains unless domains are kept separate.
    pub user_node: [Vec<usize>; 2],
    pub roles: Vec<UserRole>,
    pub overlap: Vec<usize>,
    /// `(user node, item node)` pairs per edge type.
    pub edges: [Vec<(usize, usize)>; 2],
    /// `degree[d][n]`: number of type-`d` edges at node `n`.
    pub degree: [Vec<usize>; 2],
    pub l: Arc<SparseMatrix>,
    pub l_s: Arc<SparseMatrix>,
    pub l_t: Arc<SparseMatrix>,
    pub separate_domains: bool,
}

impl CrossDomainGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_user_nodes + self.n_items[0] + self.n_items[1]
    }

    pub fn item_offset(&self, d: Domain) -> usize {
        match d {
            Domain::S => self.n_user_nodes,
            Domain::T => self.n_user_nodes + self.n_items[0],
        }
    }

    pub fn item_node(&self, d: Domain, item: usize) -> usize {
        self.item_offset(d) + item
    }

    pub fn l_domain(&self, d: Domain) -> &Arc<SparseMatrix> {
        match d {
            Domain::S => &self.l_s,
            Domain::T => &self.l_t,
        }
    }

    pub fn total_degree(&self, node: usize) -> usize {
        self.degree[0][node] + self.degree[1][node]
    }

    /// Edge type of `(a, b)`, if they are adjacent.
    pub fn edge_type(&self, a: usize, b: usize) -> Option<Domain> {
        if self.l_s.get(a, b) != 0.0 {
            Some(Domain::S)
        } else if self.l_t.get(a, b) != 0.0 {
            Some(Domain::T)
        } else {
            None
        }
    }

    pub fn stats(&self) -> GraphStats {
        let isolated_items = (self.n_user_nodes..self.n_nodes()).filter(|&n| self.total_degree(n) == 0).count();
        GraphStats {
            user_nodes: self.n_user_nodes,
            item_nodes: self.n_items,
            edges: [self.edges[0].len(), self.edges[1].len()],
            overlap_users: self.overlap.len(),
            isolated_items,
        }
    }
}

/// Builds the graph from the training interactions of `ds`. With
/// `separate_domains`, each overlapping user gets one node per domain (the
/// target-side node is appended after all regular user nodes) and the two
/// domains share no node.
///
/// Items without training edges (possible after hold-out) keep empty rows; a
/// user node without edges is a contract error.
pub fn build_graph(ds: &Dataset, separate_domains: bool) -> Result<CrossDomainGraph> {
    let n_users = ds.n_users();
    let roles: Vec<UserRole> = (0..n_users).map(|u| ds.role(u)).collect();
    let overlap: Vec<usize> = (0..n_users).filter(|&u| roles[u] == UserRole::Overlap).collect();
    let mut user_node = [(0..n_users).collect::<Vec<_>>(), (0..n_users).collect::<Vec<_>>()];
    let mut n_user_nodes = n_users;
    if separate_domains {
        for &u in &overlap {
            user_node[1][u] = n_user_nodes;
            n_user_nodes += 1;
        }
    }
    let n_items = [ds.n_items(Domain::S), ds.n_items(Domain::T)];
    let n_nodes = n_user_nodes + n_items[0] + n_items[1];
    let offset = [n_user_nodes, n_user_nodes + n_items[0]];

    let mut edges: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
    let mut degree = [vec![0usize; n_nodes], vec![0usize; n_nodes]];
    for d in Domain::ALL {
        let di = d.index();
        for u in 0..n_users {
            for &i in ds.user_items(u, d) {
                let (a, b) = (user_node[di][u], offset[di] + i);
                edges[di].push((a, b));
                degree[di][a] += 1;
                degree[di][b] += 1;
            }
        }
    }
    for u in 0..n_users {
        for d in domains_of(roles[u]) {
            let node = user_node[d.index()][u];
            if degree[0][node] + degree[1][node] == 0 {
                return Err(GraphError::Contract(format!("user {} has no training interactions", ds.users[u])));
            }
        }
    }

    let total: Vec<f64> = (0..n_nodes).map(|n| (degree[0][n] + degree[1][n]).max(1) as f64).collect();
    let mut trip: [Vec<(usize, usize, f64)>; 2] = [Vec::new(), Vec::new()];
    for di in 0..2 {
        for &(a, b) in &edges[di] {
            let w = 1.0 / (total[a] * total[b]).sqrt();
            trip[di].push((a, b, w));
            trip[di].push((b, a, w));
        }
    }
    let l_s = SparseMatrix::from_triplets(n_nodes, n_nodes, &trip[0])?;
    let l_t = SparseMatrix::from_triplets(n_nodes, n_nodes, &trip[1])?;
    let l = l_s.add(&l_t)?;
    Ok(CrossDomainGraph {
        n_users,
        n_user_nodes,
        n_items,
        user_node,
        roles,
        overlap,
        edges,
        degree,
        l: Arc::new(l),
        l_s: Arc::new(l_s),
        l_t: Arc::new(l_t),
        separate_domains,
    })
}

/// Second-order user neighborhoods of overlapping users, per domain.
#[derive(Clone, Debug)]
pub struct TwoHopIndex {
    /// Overlapping users (dataset indices) in ascending order.
    pub users: Vec<usize>,
    /// `neighbors[d][k]`: user nodes reachable from `users[k]` through one type-`d` item.
    pub neighbors: [Vec<Vec<usize>>; 2],
    pub cap: usize,
}

impl TwoHopIndex {
    pub fn build(g: &CrossDomainGraph, cap: usize) -> Self {
        let mut neighbors: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
        for d in Domain::ALL {
            let di = d.index();
            let mut item_users: HashMap<usize, Vec<usize>> = HashMap::new();
            let mut user_items: HashMap<usize, Vec<usize>> = HashMap::new();
            for &(a, b) in &g.edges[di] {
                item_users.entry(b).or_default().push(a);
                user_items.entry(a).or_default().push(b);
            }
            neighbors[di] = g
                .overlap
                .iter()
                .map(|&u| {
                    let node = g.user_node[di][u];
                    let mut co: HashMap<usize, usize> = HashMap::new();
                    for item in user_items.get(&node).into_iter().flatten() {
                        for &w in &item_users[item] {
                            if w != node {
                                *co.entry(w).or_default() += 1;
                            }
                        }
                    }
                    let mut ranked: Vec<(usize, usize)> = co.into_iter().collect();
                    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                    ranked.truncate(cap);
                    ranked.into_iter().map(|(w, _)| w).collect()
                })
                .collect();
        }
        Self { users: g.overlap.clone(), neighbors, cap }
    }

    /// Neighbors of overlapping user `u` (dataset index), or `None` if `u` is not overlapping.
    pub fn of(&self, u: usize, d: Domain) -> Option<&[usize]> {
        self.users.binary_search(&u).ok().map(|k| self.neighbors[d.index()][k].as_slice())
    }
}

/// Parameters that produce the initial node embeddings: linear maps from
/// features, or free tables when `free` is set.
pub fn init_embedding_params(
    g: &CrossDomainGraph,
    ds: &Dataset,
    dim: usize,
    free: bool,
    rng: &mut impl Rng,
) -> Result<ParamSet> {
    let mut ps = ParamSet::new();
    if free {
        ps.insert("init.free_user", Tensor::randn([g.n_user_nodes, dim], 0.1, rng))?;
        ps.insert("init.free_item_S", Tensor::randn([g.n_items[0], dim], 0.1, rng))?;
        ps.insert("init.free_item_T", Tensor::randn([g.n_items[1], dim], 0.1, rng))?;
    } else {
        let fu = ds.user_features.cols();
        ps.insert("init.user_S", Tensor::kaiming_uniform([fu, dim], rng))?;
        ps.insert("init.user_T", Tensor::kaiming_uniform([fu, dim], rng))?;
        for d in Domain::ALL {
            let fi = ds.item_features[d.index()].cols();
            ps.insert(format!("init.item_{d}"), Tensor::kaiming_uniform([fi, dim], rng))?;
        }
    }
    Ok(ps)
}

fn domains_of(role: UserRole) -> &'static [Domain] {
    match role {
        UserRole::Overlap => &Domain::ALL,
        UserRole::SourceOnly => &[Domain::S],
        UserRole::TargetOnly => &[Domain::T],
    }
}

fn role_mask(roles: &[UserRole], want: UserRole) -> Result<Tensor> {
    let v = roles.iter().map(|&r| f64::from(u8::from(r == want))).collect();
    Ok(Tensor::new([roles.len(), 1], v)?)
}

/// Initial node embedding table `E0` (`n_nodes × dim`).
///
/// With features, users get `e_S = h_u P_S` and `e_T = h_u P_T`; a user node
/// shared by both domains takes their element-wise max, a per-domain node takes
/// its own side. Items get `h_v P_d`.
pub fn initial_embeddings(g: &CrossDomainGraph, ds: &Dataset, params: &ParamSet) -> Result<Tensor> {
    let n = g.n_nodes();
    let items = |d: Domain| -> Result<Tensor> {
        let rows: Vec<usize> = (0..g.n_items[d.index()]).map(|i| g.item_node(d, i)).collect();
        let t = match params.get(&format!("init.free_item_{d}")) {
            Some(t) => t.clone(),
            None => ds.item_features[d.index()].matmul(params.expect(&format!("init.item_{d}"))?)?,
        };
        Ok(t.scatter_add_rows(&rows, n)?)
    };
    let users = if let Some(t) = params.get("init.free_user") {
        let rows: Vec<usize> = (0..g.n_user_nodes).collect();
        t.scatter_add_rows(&rows, n)?
    } else {
        let e_s = ds.user_features.matmul(params.expect("init.user_S")?)?;
        let e_t = ds.user_features.matmul(params.expect("init.user_T")?)?;
        let rows: Vec<usize> = (0..g.n_users).collect();
        if g.separate_domains {
            let with =
                |d: Domain| -> Vec<usize> { (0..g.n_users).filter(|&u| domains_of(g.roles[u]).contains(&d)).collect() };
            let (us, ut) = (with(Domain::S), with(Domain::T));
            let ns: Vec<usize> = us.iter().map(|&u| g.user_node[0][u]).collect();
            let nt: Vec<usize> = ut.iter().map(|&u| g.user_node[1][u]).collect();
            e_s.gather_rows(&us)?.scatter_add_rows(&ns, n)?.add(&e_t.gather_rows(&ut)?.scatter_add_rows(&nt, n)?)?
        } else {
            let merged = role_mask(&g.roles, UserRole::SourceOnly)?
                .mul(&e_s)?
                .add(&role_mask(&g.roles, UserRole::TargetOnly)?.mul(&e_t)?)?
                .add(&role_mask(&g.roles, UserRole::Overlap)?.mul(&e_s.maximum(&e_t)?)?)?;
            merged.scatter_add_rows(&rows, n)?
        }
    };
    Ok(users.add(&items(Domain::S)?)?.add(&items(Domain::T)?)?)
}

/// Per-user rows (`n_users × dim`) from a node table. Users with two nodes are
/// max-pooled across them.
pub fn user_rows(g: &CrossDomainGraph, nodes: &Tensor) -> Result<Tensor> {
    if g.separate_domains {
        Ok(nodes.gather_rows(&g.user_node[0])?.maximum(&nodes.gather_rows(&g.user_node[1])?)?)
    } else {
        let rows: Vec<usize> = (0..g.n_users).collect();
        Ok(nodes.gather_rows(&rows)?)
    }
}

/// Item rows of domain `d` from a node table.
pub fn item_rows(g: &CrossDomainGraph, nodes: &Tensor, d: Domain) -> Result<Tensor> {
    let rows: Vec<usize> = (0..g.n_items[d.index()]).map(|i| g.item_node(d, i)).collect();
    Ok(nodes.gather_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn dataset(s: Vec<Vec<usize>>, t: Vec<Vec<usize>>, n_items: [usize; 2]) -> Dataset {
        let nu = s.len();
        let ts = |p: &Vec<Vec<usize>>| p.iter().map(|r| vec![None; r.len()]).collect();
        Dataset {
            users: (0..nu).map(|u| format!("u{u}")).collect(),
            items: [
                (0..n_items[0]).map(|i| format!("s{i}")).collect(),
                (0..n_items[1]).map(|i| format!("t{i}")).collect(),
            ],
            timestamps: [ts(&s), ts(&t)],
            positives: [s, t],
            withheld: [vec![Vec::new(); nu], vec![Vec::new(); nu]],
            user_features: Tensor::full([nu, 2], 1.0),
            item_features: [Tensor::full([n_items[0], 2], 1.0), Tensor::full([n_items[1], 2], 1.0)],
        }
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_user_embedding(Some(&[0.2, 0.5]), Some(&[0.4, 0.1])).unwrap(), vec![0.4, 0.5]);
        assert_eq!(merge_user_embedding(Some(&[0.2, 0.5]), None).unwrap(), vec![0.2, 0.5]);
        assert_eq!(merge_user_embedding(Some(&[0.3, 0.1]), Some(&[0.3, 0.1])).unwrap(), vec![0.3, 0.1]);
        assert!(merge_user_embedding(None, None).is_err());
    }

    proptest! {
        #[test]
        fn merge_is_monotone(
            s in proptest::collection::vec(-5.0f64..5.0, 4),
            t in proptest::collection::vec(-5.0f64..5.0, 4),
            k in 0usize..4,
            bump in 0.0f64..3.0,
        ) {
            let base = merge_user_embedding(Some(&s), Some(&t)).unwrap();
            let mut s2 = s.clone();
            s2[k] += bump;
            let up = merge_user_embedding(Some(&s2), Some(&t)).unwrap();
            for (a, b) in base.iter().zip(&up) {
                prop_assert!(b >= a);
            }
        }
    }

    #[test]
    fn single_edge_and_star() {
        let g = build_graph(&dataset(vec![vec![0]], vec![vec![]], [1, 1]), false).unwrap();
        assert_eq!(g.l_s.get(0, 1), 1.0);
        let g = build_graph(&dataset(vec![vec![0, 1]], vec![vec![]], [2, 1]), false).unwrap();
        assert!((g.l_s.get(0, 1) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((g.l_s.get(0, 2) - 0.5f64.sqrt()).abs() < 1e-15);
        // The T item has no S entries.
        assert!(g.l_s.row(3).next().is_none());
    }

    #[test]
    fn blocks_partition_and_symmetry() {
        let ds = dataset(vec![vec![0, 1], vec![1], vec![]], vec![vec![0], vec![], vec![0, 1]], [2, 2]);
        let g = build_graph(&ds, false).unwrap();
        assert!(g.l.is_symmetric());
        for (r, c, w) in g.l.triplets() {
            assert_eq!(w, g.l_s.get(r, c) + g.l_t.get(r, c));
            assert!(g.l_s.get(r, c) == 0.0 || g.l_t.get(r, c) == 0.0);
        }
        // Overlap user 0: degree 3, S item 1 has degree 2.
        assert!((g.l.get(0, g.item_node(Domain::S, 1)) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        for (n, s) in g.l.row_sums().iter().enumerate() {
            let max_deg = (0..g.n_nodes()).map(|m| g.total_degree(m)).max().unwrap();
            assert!(*s <= (max_deg as f64).sqrt() + 1e-12, "row {n}");
        }
        assert_eq!(g.overlap, vec![0]);
    }

    #[test]
    fn separate_domains_split_overlap_users() {
        let ds = dataset(vec![vec![0], vec![1]], vec![vec![0], vec![]], [2, 1]);
        let g = build_graph(&ds, true).unwrap();
        assert_eq!(g.n_user_nodes, 3);
        assert_eq!(g.user_node[1][0], 2);
        assert_eq!(g.edge_type(0, g.item_node(Domain::T, 0)), None);
        assert_eq!(g.edge_type(2, g.item_node(Domain::T, 0)), Some(Domain::T));
    }

    #[test]
    fn isolated_user_is_rejected() {
        let ds = dataset(vec![vec![0], vec![]], vec![vec![], vec![]], [1, 1]);
        assert!(matches!(build_graph(&ds, false), Err(GraphError::Contract(_))));
    }

    #[test]
    fn two_hop_path_and_cap() {
        // u0 - s0 - u1 ; u2 shares nothing. u0 and u1 overlap through T item 0.
        let ds = dataset(vec![vec![0], vec![0], vec![1]], vec![vec![0], vec![0], vec![]], [2, 1]);
        let g = build_graph(&ds, false).unwrap();
        let idx = TwoHopIndex::build(&g, DEFAULT_MAX_NEIGHBORS);
        assert_eq!(idx.of(0, Domain::S).unwrap(), &[1]);
        assert_eq!(idx.of(1, Domain::T).unwrap(), &[0]);
        assert!(idx.of(2, Domain::S).is_none());
    }

    #[test]
    fn initial_embeddings_max_pool_overlap_users() {
        let ds = dataset(vec![vec![0], vec![]], vec![vec![0], vec![0]], [1, 1]);
        let g = build_graph(&ds, false).unwrap();
        let mut ps = ParamSet::new();
        ps.insert("init.user_S", Tensor::from_rows(&[&[1.0, -1.0], &[0.0, 0.0]])).unwrap();
        ps.insert("init.user_T", Tensor::from_rows(&[&[-1.0, 1.0], &[0.0, 0.0]])).unwrap();
        ps.insert("init.item_S", Tensor::zeros([2, 2])).unwrap();
        ps.insert("init.item_T", Tensor::zeros([2, 2])).unwrap();
        let e0 = initial_embeddings(&g, &ds, &ps).unwrap();
        assert_eq!(e0.row(0), &[1.0, 1.0]);
        assert_eq!(e0.row(1), &[-1.0, 1.0]);
    }
}
