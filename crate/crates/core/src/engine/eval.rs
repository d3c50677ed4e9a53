use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EngineError, Model, Result};
use crate::data::{Dataset, Domain, SplitPlan, TestCase};
use crate::graph::GraphStats;
use crate::towers::{tower_forward, Side, PROB_EPS};

/// Largest cutoff reported; `hit[n-1]` holds Hit@n.
pub const TOP_N: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub domain: Domain,
    pub users: usize,
    /// Hit@1..=Hit@TOP_N.
    pub hit: Vec<f64>,
    /// NDCG@1..=NDCG@TOP_N.
    pub ndcg: Vec<f64>,
}

impl DomainMetrics {
    pub fn hit_at(&self, n: usize) -> f64 {
        self.hit[n - 1]
    }

    pub fn ndcg_at(&self, n: usize) -> f64 {
        self.ndcg[n - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domains: [DomainMetrics; 2],
    pub config_hash: String,
    pub seed: u64,
    pub split_hash: String,
    pub graph: Option<GraphStats>,
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn domain(&self, d: Domain) -> &DomainMetrics {
        &self.domains[d.index()]
    }

    /// Everything except wall time, as canonical JSON. Equal runs give equal bytes.
    pub fn metrics_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("wall_time_s");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }
}

/// 1-based rank of the positive among the candidates: ties go to the smaller item index.
pub fn rank_of(positive: usize, pos_score: f64, negatives: &[(usize, f64)]) -> usize {
    1 + negatives.iter().filter(|&&(i, s)| s > pos_score || (s == pos_score && i < positive)).count()
}

/// Hit@n and NDCG@n for n in 1..=TOP_N.
pub fn metrics_from_ranks(domain: Domain, ranks: &[usize]) -> DomainMetrics {
    let mut hit = vec![0.0; TOP_N];
    let mut ndcg = vec![0.0; TOP_N];
    for &r in ranks {
        for n in r.max(1)..=TOP_N {
            hit[n - 1] += 1.0;
            ndcg[n - 1] += 1.0 / ((r + 1) as f64).log2();
        }
    }
    if !ranks.is_empty() {
        let m = ranks.len() as f64;
        hit.iter_mut().chain(ndcg.iter_mut()).for_each(|v| *v /= m);
    }
    DomainMetrics { domain, users: ranks.len(), hit, ndcg }
}

/// Evaluator parallelism: `COAST_THREADS` if set, otherwise the machine's cores.
pub fn thread_count() -> usize {
    std::env::var("COAST_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Ranks every case with `score(case, item)` and aggregates per domain.
pub fn evaluate_with<F>(split: &SplitPlan, score: F) -> Result<[DomainMetrics; 2]>
where
    F: Fn(&TestCase, usize) -> f64 + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| EngineError::Config(format!("thread pool: {e}")))?;
    let ranks: Vec<usize> = pool.install(|| {
        split
            .cases
            .par_iter()
            .map(|c| {
                let negs: Vec<(usize, f64)> = c.negatives.iter().map(|&i| (i, score(c, i))).collect();
                rank_of(c.positive, score(c, c.positive), &negs)
            })
            .collect()
    });
    Ok(Domain::ALL.map(|d| {
        let r: Vec<usize> = split.cases.iter().zip(&ranks).filter(|(c, _)| c.domain == d).map(|(_, &r)| r).collect();
        metrics_from_ranks(d, &r)
    }))
}

/// Frozen tower outputs for the users and items a split touches.
#[derive(Clone, Debug)]
pub struct Scorer {
    width: usize,
    users: [HashMap<usize, Vec<f64>>; 2],
    items: [HashMap<usize, Vec<f64>>; 2],
}

impl Scorer {
    pub fn new(model: &Model, split: &SplitPlan) -> Result<Self> {
        let fwd = model.forward(&model.params)?;
        let mut users: [HashMap<usize, Vec<f64>>; 2] = Default::default();
        let mut items: [HashMap<usize, Vec<f64>>; 2] = Default::default();
        let mut width = 0;
        for d in Domain::ALL {
            let mut us: Vec<usize> = split.cases_in(d).map(|c| c.user).collect();
            let mut is: Vec<usize> = split
                .cases_in(d)
                .flat_map(|c| std::iter::once(c.positive).chain(c.negatives.iter().copied()))
                .collect();
            us.sort_unstable();
            us.dedup();
            is.sort_unstable();
            is.dedup();
            if us.is_empty() {
                continue;
            }
            let uo = tower_forward(&model.params, Side::User, d, &fwd.users.gather_rows(&us)?)?;
            let io = tower_forward(&model.params, Side::Item, d, &fwd.items[d.index()].gather_rows(&is)?)?;
            width = uo.cols();
            users[d.index()] = us.iter().enumerate().map(|(k, &u)| (u, uo.row(k).to_vec())).collect();
            items[d.index()] = is.iter().enumerate().map(|(k, &i)| (i, io.row(k).to_vec())).collect();
        }
        Ok(Self { width, users, items })
    }

    /// Predicted probability, identical to the towers' scoring on unit vectors.
    pub fn score(&self, user: usize, d: Domain, item: usize) -> f64 {
        let u = &self.users[d.index()][&user];
        let v = &self.items[d.index()][&item];
        debug_assert_eq!(u.len(), self.width);
        let cos: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        ((cos + 1.0) / 2.0).clamp(PROB_EPS, 1.0 - PROB_EPS)
    }
}

pub fn evaluate(model: &Model, split: &SplitPlan) -> Result<EvalReport> {
    let start = Instant::now();
    let scorer = Scorer::new(model, split)?;
    let domains = evaluate_with(split, |c, i| scorer.score(c.user, c.domain, i))?;
    Ok(EvalReport {
        domains,
        config_hash: model.cfg.hash(),
        seed: model.cfg.seed,
        split_hash: split.hash(),
        graph: Some(model.graph.stats()),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Uniform random scores, one seeded stream per case.
pub fn random_baseline(split: &SplitPlan, seed: u64) -> Result<[DomainMetrics; 2]> {
    let ranks: Vec<(Domain, usize)> = split
        .cases
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ k as u64);
            let pos = rng.gen::<f64>();
            let negs: Vec<(usize, f64)> = c.negatives.iter().map(|&i| (i, rng.gen())).collect();
            (c.domain, rank_of(c.positive, pos, &negs))
        })
        .collect();
    Ok(Domain::ALL.map(|d| {
        let r: Vec<usize> = ranks.iter().filter(|(cd, _)| *cd == d).map(|&(_, r)| r).collect();
        metrics_from_ranks(d, &r)
    }))
}

/// Scores items by training-set popularity.
pub fn popularity_baseline(train: &Dataset, split: &SplitPlan) -> Result<[DomainMetrics; 2]> {
    let deg = [train.item_degree(Domain::S), train.item_degree(Domain::T)];
    evaluate_with(split, |c, i| deg[c.domain.index()][i] as f64)
}
