use std::collections::HashSet;

use log::info;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Dataset, Domain, Result};

pub const NUM_NEGATIVES: usize = 99;

/// One ranking query: the held-out positive against sampled unobserved items.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub user: usize,
    pub domain: Domain,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub cases: Vec<TestCase>,
    /// Users per domain left out of the test set for having fewer than two positives.
    pub excluded: [usize; 2],
}

impl SplitPlan {
    pub fn cases_in(&self, d: Domain) -> impl Iterator<Item = &TestCase> {
        self.cases.iter().filter(move |c| c.domain == d)
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.cases {
            h.update((c.user as u64).to_le_bytes());
            h.update([c.domain.index() as u8]);
            h.update((c.positive as u64).to_le_bytes());
            for &n in &c.negatives {
                h.update((n as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Holds out one positive per user and domain (latest by timestamp when every
/// interaction of that user in the domain has one, otherwise uniformly at random)
/// and samples 99 unobserved negatives without replacement.
pub fn split_leave_one_out(ds: &Dataset, seed: u64) -> Result<SplitPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let mut excluded = [0; 2];
    for d in Domain::ALL {
        let di = d.index();
        let n_items = ds.n_items(d);
        let users = ds.domain_users(d);
        if users.is_empty() {
            continue;
        }
        if n_items < NUM_NEGATIVES + 1 {
            return Err(DataError::Config(format!(
                "domain {d} has {n_items} items; at least {} are needed to sample {NUM_NEGATIVES} negatives",
                NUM_NEGATIVES + 1
            )));
        }
        for u in users {
            let pos = &ds.positives[di][u];
            let observed = pos.len() + ds.withheld[di][u].len();
            if pos.len() < 2 || n_items - observed < NUM_NEGATIVES {
                excluded[di] += 1;
                continue;
            }
            let ts = &ds.timestamps[di][u];
            let held = if ts.iter().all(Option::is_some) {
                let k = (0..pos.len()).max_by_key(|&k| (ts[k], pos[k])).expect("non-empty");
                pos[k]
            } else {
                pos[rng.gen_range(0..pos.len())]
            };
            let negatives = if observed * 2 < n_items {
                let mut seen = HashSet::with_capacity(NUM_NEGATIVES);
                let mut out = Vec::with_capacity(NUM_NEGATIVES);
                while out.len() < NUM_NEGATIVES {
                    let i = rng.gen_range(0..n_items);
                    if !ds.is_observed(u, d, i) && seen.insert(i) {
                        out.push(i);
                    }
                }
                out
            } else {
                let pool: Vec<usize> = (0..n_items).filter(|&i| !ds.is_observed(u, d, i)).collect();
                index::sample(&mut rng, pool.len(), NUM_NEGATIVES).into_iter().map(|k| pool[k]).collect()
            };
            cases.push(TestCase { user: u, domain: d, positive: held, negatives });
        }
        if excluded[di] > 0 {
            info!("domain {d}: {} users excluded from the test set", excluded[di]);
        }
    }
    Ok(SplitPlan { seed, cases, excluded })
}
