use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Domain, Result};

pub const DEFAULT_BATCH_SIZE: usize = 4096;
pub const DEFAULT_NEG_RATIO: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example {
    pub user: usize,
    pub item: usize,
    pub domain: Domain,
    pub label: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub examples: Vec<Example>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn in_domain(&self, d: Domain) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.domain == d)
    }
}

fn negative(ds: &Dataset, u: usize, d: Domain, rng: &mut impl Rng) -> Option<usize> {
    let n = ds.n_items(d);
    let observed = ds.positives[d.index()][u].len() + ds.withheld[d.index()][u].len();
    if observed >= n {
        return None;
    }
    if observed * 2 < n {
        loop {
            let i = rng.gen_range(0..n);
            if !ds.is_observed(u, d, i) {
                return Some(i);
            }
        }
    }
    let pool: Vec<usize> = (0..n).filter(|&i| !ds.is_observed(u, d, i)).collect();
    pool.choose(rng).copied()
}

/// One pass over every training positive, shuffled and cut into batches of about
/// `batch_size` examples. Each batch takes the same share of each domain's
/// positives, and every positive is followed by `neg_ratio` unobserved items.
pub fn epoch_batches(ds: &Dataset, batch_size: usize, neg_ratio: usize, rng: &mut impl Rng) -> Result<Vec<Batch>> {
    if neg_ratio < 1 {
        return Err(DataError::Config("neg_ratio must be at least 1".into()));
    }
    if batch_size == 0 {
        return Err(DataError::Config("batch_size must be positive".into()));
    }
    let mut pos: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
    for d in Domain::ALL {
        for (u, items) in ds.positives[d.index()].iter().enumerate() {
            pos[d.index()].extend(items.iter().map(|&i| (u, i)));
        }
        pos[d.index()].shuffle(rng);
    }
    let total = pos[0].len() + pos[1].len();
    let n_batches = (total * (1 + neg_ratio)).div_ceil(batch_size).max(1);
    let mut batches = vec![Batch::default(); n_batches];
    for d in Domain::ALL {
        let list = &pos[d.index()];
        for (b, batch) in batches.iter_mut().enumerate() {
            let lo = list.len() * b / n_batches;
            let hi = list.len() * (b + 1) / n_batches;
            for &(u, i) in &list[lo..hi] {
                batch.examples.push(Example { user: u, item: i, domain: d, label: 1.0 });
                for _ in 0..neg_ratio {
                    if let Some(j) = negative(ds, u, d, rng) {
                        batch.examples.push(Example { user: u, item: j, domain: d, label: 0.0 });
                    }
                }
            }
        }
    }
    batches.retain(|b| !b.is_empty());
    Ok(batches)
}

/// A single stratified batch drawn under `seed`.
pub fn sample_training_batch(ds: &Dataset, batch_size: usize, neg_ratio: usize, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(epoch_batches(ds, batch_size, neg_ratio, &mut rng)?.into_iter().next().unwrap_or_default())
}
