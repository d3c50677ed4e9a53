use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Domain, Result};
use crate::tensor::Tensor;

/// Planted-interest generator settings. Users are laid out as overlapping users
/// first, then source-only, then target-only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_source_only: usize,
    pub n_target_only: usize,
    pub n_overlap: usize,
    pub n_items: [usize; 2],
    pub n_interests: usize,
    /// Mean interactions per user in each domain (at least 2).
    pub mean_interactions: [f64; 2],
    /// Softmax temperature on interest affinity; lower is sharper.
    pub temperature: f64,
    pub dirichlet_alpha: f64,
    pub popularity_std: f64,
    pub feature_dim: usize,
    pub item_feature_noise: f64,
    pub user_feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_source_only: 1400,
            n_target_only: 1400,
            n_overlap: 600,
            n_items: [1000, 1000],
            n_interests: 8,
            mean_interactions: [12.0, 3.0],
            temperature: 0.1,
            dirichlet_alpha: 0.3,
            popularity_std: 0.5,
            feature_dim: 16,
            item_feature_noise: 0.3,
            user_feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// `users` per domain of which `overlap` appear in both.
    pub fn with_domain_users(users: usize, overlap: usize, items: usize, seed: u64) -> Result<Self> {
        if overlap > users {
            return Err(DataError::Config(format!("overlap {overlap} exceeds users per domain {users}")));
        }
        Ok(Self {
            n_source_only: users - overlap,
            n_target_only: users - overlap,
            n_overlap: overlap,
            n_items: [items, items],
            seed,
            ..Self::default()
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_overlap + self.n_source_only + self.n_target_only
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::Config(m.to_owned()));
        if self.n_overlap + self.n_source_only == 0 || self.n_overlap + self.n_target_only == 0 {
            return bad("each domain needs at least one user");
        }
        if self.n_items.contains(&0) || self.n_interests == 0 {
            return bad("item and interest counts must be positive");
        }
        if self.mean_interactions.iter().any(|&m| !(m >= 2.0)) {
            return bad("mean interactions per user must be at least 2");
        }
        if !(self.temperature > 0.0 && self.dirichlet_alpha > 0.0) {
            return bad("temperature and dirichlet_alpha must be positive");
        }
        if self.feature_dim < self.n_interests {
            return bad("feature_dim must hold the interest indicator");
        }
        if !(self.popularity_std >= 0.0 && self.item_feature_noise >= 0.0 && self.user_feature_noise >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        Ok(())
    }
}

/// Generated dataset plus its ground truth.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Interest mixture per user, shared across domains for overlapping users.
    pub interests: Vec<Vec<f64>>,
    pub item_clusters: [Vec<usize>; 2],
}

fn noisy_row(signal: &[f64], dim: usize, noise: f64, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim).map(|k| signal.get(k).copied().unwrap_or(0.0) + noise * normal.sample(rng)).collect()
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.n_interests;
    let nu = cfg.n_users();

    let interests: Vec<Vec<f64>> = if k == 1 {
        vec![vec![1.0]; nu]
    } else {
        let dir = Dirichlet::new_with_size(cfg.dirichlet_alpha, k).map_err(|e| DataError::Config(e.to_string()))?;
        (0..nu).map(|_| dir.sample(&mut rng)).collect()
    };

    let cluster = Uniform::new(0, k);
    let pop = Normal::new(0.0, cfg.popularity_std).map_err(|e| DataError::Config(e.to_string()))?;
    let mut item_clusters: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut bias: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for d in 0..2 {
        item_clusters[d] = (0..cfg.n_items[d]).map(|_| cluster.sample(&mut rng)).collect();
        bias[d] = (0..cfg.n_items[d]).map(|_| pop.sample(&mut rng)).collect();
    }

    let in_domain = |u: usize, d: Domain| match d {
        Domain::S => u < cfg.n_overlap + cfg.n_source_only,
        Domain::T => u < cfg.n_overlap || u >= cfg.n_overlap + cfg.n_source_only,
    };
    let gumbel = Uniform::new(f64::MIN_POSITIVE, 1.0);
    let mut positives: [Vec<Vec<usize>>; 2] = [vec![Vec::new(); nu], vec![Vec::new(); nu]];
    for d in Domain::ALL {
        let di = d.index();
        let n_items = cfg.n_items[di];
        let extra = cfg.mean_interactions[di] - 2.0;
        let poisson =
            (extra > 0.0).then(|| Poisson::new(extra).map_err(|e| DataError::Config(e.to_string()))).transpose()?;
        for (u, theta) in interests.iter().enumerate() {
            if !in_domain(u, d) {
                continue;
            }
            let n = (2 + poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize)).min(n_items);
            // Gumbel-top-n draws n items without replacement from softmax(score).
            let mut keyed: Vec<(f64, usize)> = (0..n_items)
                .map(|i| {
                    let score = theta[item_clusters[di][i]] / cfg.temperature + bias[di][i];
                    let g = -(-gumbel.sample(&mut rng).ln()).ln();
                    (score + g, i)
                })
                .collect();
            keyed.select_nth_unstable_by(n - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut chosen: Vec<usize> = keyed[..n].iter().map(|p| p.1).collect();
            chosen.sort_unstable();
            positives[di][u] = chosen;
        }
    }

    let dim = cfg.feature_dim;
    let mut uf = Vec::with_capacity(nu * dim);
    for theta in &interests {
        uf.extend(noisy_row(theta, dim, cfg.user_feature_noise, &mut rng));
    }
    let mut item_features = [Tensor::zeros([0, dim]), Tensor::zeros([0, dim])];
    for d in 0..2 {
        let mut f = Vec::with_capacity(cfg.n_items[d] * dim);
        for &c in &item_clusters[d] {
            let mut one = vec![0.0; k];
            one[c] = 1.0;
            f.extend(noisy_row(&one, dim, cfg.item_feature_noise, &mut rng));
        }
        item_features[d] = Tensor::new([cfg.n_items[d], dim], f)?;
    }

    let timestamps = [
        positives[0].iter().map(|p| vec![None; p.len()]).collect(),
        positives[1].iter().map(|p| vec![None; p.len()]).collect(),
    ];
    let dataset = Dataset {
        users: (0..nu).map(|u| format!("u{u}")).collect(),
        items: [
            (0..cfg.n_items[0]).map(|i| format!("s{i}")).collect(),
            (0..cfg.n_items[1]).map(|i| format!("t{i}")).collect(),
        ],
        positives,
        timestamps,
        withheld: [vec![Vec::new(); nu], vec![Vec::new(); nu]],
        user_features: Tensor::new([nu, dim], uf)?,
        item_features,
    };
    dataset.validate()?;
    Ok(SynthData { dataset, interests, item_clusters })
}
