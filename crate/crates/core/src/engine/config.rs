use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EngineError, Result};
use crate::align::AlignConfig;
use crate::data::{DEFAULT_BATCH_SIZE, DEFAULT_NEG_RATIO};
use crate::gcn::GcnConfig;
use crate::graph::DEFAULT_MAX_NEIGHBORS;
use crate::towers::GradScope;

/// Component switches for the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Free embeddings instead of feature projections.
    pub nf: bool,
    /// Separate per-domain graphs, overlapping users merged only at prediction.
    pub ns: bool,
    /// No element-wise interaction terms in message passing.
    pub nm: bool,
    /// No user-user alignment.
    pub nu: bool,
    /// No user-item alignment.
    pub ni: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    NF,
    NS,
    NM,
    NU,
    NI,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::NF, Variant::NS, Variant::NM, Variant::NU, Variant::NI];

    pub fn apply(self, a: &mut Ablation) {
        match self {
            Variant::NF => a.nf = true,
            Variant::NS => a.ns = true,
            Variant::NM => a.nm = true,
            Variant::NU => a.nu = true,
            Variant::NI => a.ni = true,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NF" => Ok(Variant::NF),
            "NS" => Ok(Variant::NS),
            "NM" => Ok(Variant::NM),
            "NU" => Ok(Variant::NU),
            "NI" => Ok(Variant::NI),
            _ => Err(EngineError::Config(format!("unknown ablation variant {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub prototypes: usize,
    pub proj_dim: usize,
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_eps: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub neg_ratio: usize,
    pub seed: u64,
    pub grad_align_params: GradScope,
    pub ablation: Ablation,
    pub overlap_ratio: f64,
    pub max_neighbors: usize,
    /// Neighbor messages carry the receiver's embedding in the `W1` term.
    pub literal_first_term: bool,
    /// Round parameters to `f32` after every step, so checkpoints are exact.
    pub f32_params: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            prototypes: 256,
            proj_dim: 64,
            temperature: 0.1,
            sinkhorn_iters: 3,
            sinkhorn_eps: 0.05,
            lambda1: 1e-2,
            lambda2: 1e-2,
            lr: 5e-4,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 100,
            neg_ratio: DEFAULT_NEG_RATIO,
            seed: 0,
            grad_align_params: GradScope::All,
            ablation: Ablation::default(),
            overlap_ratio: 1.0,
            max_neighbors: DEFAULT_MAX_NEIGHBORS,
            literal_first_term: false,
            f32_params: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EngineError::Config(m.to_owned()));
        if self.dim == 0 || self.prototypes < 2 || self.proj_dim == 0 || self.batch_size == 0 || self.neg_ratio == 0 {
            return bad("dim, proj_dim, batch_size and neg_ratio must be positive and prototypes at least 2");
        }
        if self.layers > 4 {
            return bad("at most 4 propagation layers");
        }
        if !(self.lr > 0.0 && self.temperature > 0.0 && self.sinkhorn_eps > 0.0) {
            return bad("lr, temperature and sinkhorn_eps must be positive");
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("regularization weights must be non-negative");
        }
        if !(self.overlap_ratio > 0.0 && self.overlap_ratio <= 1.0) {
            return bad("overlap_ratio must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn gcn(&self) -> GcnConfig {
        GcnConfig {
            dim: self.dim,
            layers: self.layers,
            interaction_terms: !self.ablation.nm,
            literal_first_term: self.literal_first_term,
        }
    }

    pub fn align(&self) -> AlignConfig {
        AlignConfig {
            prototypes: self.prototypes,
            proj_dim: self.proj_dim,
            temperature: self.temperature,
            sinkhorn_iters: self.sinkhorn_iters,
            sinkhorn_eps: self.sinkhorn_eps,
        }
    }

    /// Propagated embedding width `D·(layers+1)`.
    pub fn embed_dim(&self) -> usize {
        self.gcn().output_dim()
    }

    pub fn alignment_active(&self) -> bool {
        self.lambda2 != 0.0 && !(self.ablation.nu && self.ablation.ni)
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        let mut c = self.clone();
        v.apply(&mut c.ablation);
        c
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
