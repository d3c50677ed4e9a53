//! Dual-domain interaction data: ingestion, featurization, evaluation splits,
//! training samples and a synthetic generator with planted shared interests.

mod featurize;
mod load;
mod sample;
mod split;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use featurize::{featurize, hashed_bag_of_words, token_bucket, AttributeSchema, ColumnKind};
pub use load::{
    load_dataset, load_dataset_dir, parse_interactions, read_attribute_table, read_feature_file, write_dataset_dir,
    write_feature_file, DatasetPaths, FeatureSources, DEFAULT_FEATURE_DIM,
};
pub use sample::{epoch_batches, sample_training_batch, Batch, Example, DEFAULT_BATCH_SIZE, DEFAULT_NEG_RATIO};
pub use split::{split_leave_one_out, SplitPlan, TestCase, NUM_NEGATIVES};
pub use synth::{synth_generate, SynthConfig, SynthData};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("feature dimension mismatch for {entity}: expected {expected}, got {got}")]
    FeatureDim { entity: String, expected: usize, got: usize },
    #[error("missing features for {0} and no fallback featurizer enabled")]
    MissingFeatures(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    S,
    T,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::S, Domain::T];

    pub fn index(self) -> usize {
        match self {
            Domain::S => 0,
            Domain::T => 1,
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::S => Domain::T,
            Domain::T => Domain::S,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::S => "S",
            Domain::T => "T",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserRole {
    SourceOnly,
    TargetOnly,
    Overlap,
}

/// One raw log row after rating normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub domain: Domain,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// ID-mapped dual-domain dataset. Users share one index space across domains;
/// items are indexed per domain.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub users: Vec<String>,
    pub items: [Vec<String>; 2],
    /// `positives[d][u]`: sorted item indices user `u` interacted with in domain `d`.
    pub positives: [Vec<Vec<usize>>; 2],
    /// Timestamps parallel to `positives`, when every interaction carries one.
    pub timestamps: [Vec<Vec<Option<i64>>>; 2],
    /// Items observed but withheld from training (held-out test positives).
    /// Negative samplers avoid them.
    pub withheld: [Vec<Vec<usize>>; 2],
    pub user_features: Tensor,
    pub item_features: [Tensor; 2],
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self, d: Domain) -> usize {
        self.items[d.index()].len()
    }

    pub fn n_interactions(&self, d: Domain) -> usize {
        self.positives[d.index()].iter().map(Vec::len).sum()
    }

    pub fn user_items(&self, u: usize, d: Domain) -> &[usize] {
        &self.positives[d.index()][u]
    }

    pub fn has_interaction(&self, u: usize, d: Domain, item: usize) -> bool {
        self.positives[d.index()][u].binary_search(&item).is_ok()
    }

    /// Observed in the log, whether used for training or held out.
    pub fn is_observed(&self, u: usize, d: Domain, item: usize) -> bool {
        self.has_interaction(u, d, item) || self.withheld[d.index()][u].contains(&item)
    }

    pub fn role(&self, u: usize) -> UserRole {
        let s = !self.positives[0][u].is_empty() || !self.withheld[0][u].is_empty();
        let t = !self.positives[1][u].is_empty() || !self.withheld[1][u].is_empty();
        match (s, t) {
            (true, true) => UserRole::Overlap,
            (false, true) => UserRole::TargetOnly,
            _ => UserRole::SourceOnly,
        }
    }

    pub fn overlap_users(&self) -> Vec<usize> {
        (0..self.n_users()).filter(|&u| self.role(u) == UserRole::Overlap).collect()
    }

    pub fn is_overlap(&self, u: usize) -> bool {
        self.role(u) == UserRole::Overlap
    }

    /// Users that own at least one interaction (training or withheld) in `d`.
    pub fn domain_users(&self, d: Domain) -> Vec<usize> {
        (0..self.n_users())
            .filter(|&u| !self.positives[d.index()][u].is_empty() || !self.withheld[d.index()][u].is_empty())
            .collect()
    }

    pub fn item_degree(&self, d: Domain) -> Vec<usize> {
        let mut deg = vec![0; self.n_items(d)];
        for items in &self.positives[d.index()] {
            for &i in items {
                deg[i] += 1;
            }
        }
        deg
    }

    /// Copy with each test case's positive removed from training and recorded as withheld.
    pub fn without_held_out(&self, split: &SplitPlan) -> Dataset {
        let mut ds = self.clone();
        for case in &split.cases {
            let d = case.domain.index();
            let list = &mut ds.positives[d][case.user];
            if let Ok(pos) = list.binary_search(&case.positive) {
                list.remove(pos);
                ds.timestamps[d][case.user].remove(pos);
                ds.withheld[d][case.user].push(case.positive);
            }
        }
        ds
    }

    /// Splits a seeded `fraction` of overlapping users into two unrelated identities:
    /// the original index keeps the source-domain history, a new user index
    /// (appended) takes the target-domain history. Returns the new dataset and, for
    /// every severed user, `(old_index, new_target_index)`.
    pub fn sever_overlap(&self, fraction: f64, seed: u64) -> (Dataset, Vec<(usize, usize)>) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut overlap = self.overlap_users();
        let count = ((overlap.len() as f64) * fraction).round() as usize;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5e7e_0f0f);
        overlap.shuffle(&mut rng);
        let mut chosen: Vec<usize> = overlap.into_iter().take(count).collect();
        chosen.sort_unstable();

        let mut ds = self.clone();
        let mut mapping = Vec::with_capacity(chosen.len());
        let mut feats = self.user_features.to_vec();
        let dim = self.user_features.cols();
        for &u in &chosen {
            let new = ds.users.len();
            ds.users.push(format!("{}#T", self.users[u]));
            ds.positives[0].push(Vec::new());
            ds.withheld[0].push(Vec::new());
            ds.timestamps[0].push(Vec::new());
            let p = std::mem::take(&mut ds.positives[1][u]);
            ds.positives[1].push(p);
            let w = std::mem::take(&mut ds.withheld[1][u]);
            ds.withheld[1].push(w);
            let t = std::mem::take(&mut ds.timestamps[1][u]);
            ds.timestamps[1].push(t);
            feats.extend_from_slice(&self.user_features.data()[u * dim..(u + 1) * dim]);
            mapping.push((u, new));
        }
        ds.user_features = Tensor::new([ds.users.len(), dim], feats).expect("row count matches");
        (ds, mapping)
    }

    /// Content hash over ids, interactions and feature bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for u in &self.users {
            h.update(u.as_bytes());
            h.update([0]);
        }
        for d in 0..2 {
            for i in &self.items[d] {
                h.update(i.as_bytes());
                h.update([1]);
            }
            for (u, items) in self.positives[d].iter().enumerate() {
                h.update((u as u64).to_le_bytes());
                for &i in items {
                    h.update((i as u64).to_le_bytes());
                }
                for &i in &self.withheld[d][u] {
                    h.update((i as u64 | 1 << 63).to_le_bytes());
                }
            }
        }
        for t in std::iter::once(&self.user_features).chain(self.item_features.iter()) {
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let nu = self.n_users();
        if self.user_features.rows() != nu {
            return Err(DataError::Config(format!("{} user feature rows for {nu} users", self.user_features.rows())));
        }
        for d in Domain::ALL {
            let di = d.index();
            if self.positives[di].len() != nu || self.withheld[di].len() != nu || self.timestamps[di].len() != nu {
                return Err(DataError::Config(format!("domain {d} tables do not cover all users")));
            }
            if self.item_features[di].rows() != self.n_items(d) {
                return Err(DataError::Config(format!("domain {d} item feature rows mismatch")));
            }
            for items in &self.positives[di] {
                let set: HashSet<_> = items.iter().collect();
                if set.len() != items.len() || items.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(DataError::Config("positives must be sorted and unique".into()));
                }
                if items.iter().any(|&i| i >= self.n_items(d)) {
                    return Err(DataError::Config("item index out of range".into()));
                }
            }
        }
        Ok(())
    }
}

/// Reports the loader's counts, matching the usual dataset-statistics table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: [usize; 2],
    pub items: [usize; 2],
    pub interactions: [usize; 2],
    pub overlap: usize,
    pub total_users: usize,
}

impl Dataset {
    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: [self.domain_users(Domain::S).len(), self.domain_users(Domain::T).len()],
            items: [self.n_items(Domain::S), self.n_items(Domain::T)],
            interactions: [self.n_interactions(Domain::S), self.n_interactions(Domain::T)],
            overlap: self.overlap_users().len(),
            total_users: self.n_users(),
        }
    }
}
