use std::path::Path;
use std::sync::Arc;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::{EngineError, Result, TrainConfig};
use crate::align::{
    grad_vector, init_align_params, normalize_rows, user_item_loss, user_user_loss, AlignError, PROTOTYPES,
};
use crate::data::{epoch_batches, Batch, Dataset, Domain, UserRole};
use crate::gcn::{init_gcn_params, propagate};
use crate::graph::{
    build_graph, init_embedding_params, initial_embeddings, item_rows, user_rows, CrossDomainGraph, TwoHopIndex,
};
use crate::tensor::{backward_params, checkpoint, ParamSet, Tape, Tensor};
use crate::towers::{bce, init_tower_params, supervised_loss, user_tower_params, TowerError};

/// Parameters plus the fixed structures they operate on.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: TrainConfig,
    pub params: ParamSet,
    /// Training view of the data (held-out positives withheld).
    pub data: Arc<Dataset>,
    pub graph: Arc<CrossDomainGraph>,
    pub two_hop: Arc<TwoHopIndex>,
}

/// Propagated representations of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub nodes: Tensor,
    pub users: Tensor,
    pub items: [Tensor; 2],
}

/// Loss terms of one step, each a scalar tensor.
#[derive(Clone, Debug)]
pub struct StepLoss {
    pub total: Tensor,
    pub supervised: Tensor,
    pub user_user: Tensor,
    pub user_item: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub supervised: f64,
    pub user_user: f64,
    pub user_item: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<EpochLoss>,
}

fn round_f32(ps: &ParamSet) -> ParamSet {
    ps.map(|_, t| Tensor::new(t.shape(), t.data().iter().map(|&v| v as f32 as f64).collect()).expect("same shape"))
}

impl Model {
    /// Builds the graph over `data` and initializes every parameter from `cfg.seed`.
    pub fn new(data: Dataset, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::with_rng(data, cfg, &mut rng)
    }

    fn with_rng(data: Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let graph = build_graph(&data, cfg.ablation.ns)?;
        let two_hop = TwoHopIndex::build(&graph, cfg.max_neighbors);
        let mut params = init_embedding_params(&graph, &data, cfg.dim, cfg.ablation.nf, rng)?;
        params.extend(init_gcn_params(&cfg.gcn(), rng)?)?;
        params.extend(init_tower_params(cfg.embed_dim(), rng)?)?;
        params.extend(init_align_params(&cfg.align(), cfg.embed_dim(), rng)?)?;
        if cfg.f32_params {
            params = round_f32(&params);
        }
        Ok(Self { cfg: cfg.clone(), params, data: Arc::new(data), graph: Arc::new(graph), two_hop: Arc::new(two_hop) })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_params(data: Dataset, cfg: &TrainConfig, params: ParamSet) -> Result<Self> {
        let mut model = Self::new(data, cfg)?;
        if params.len() != model.params.len() {
            return Err(EngineError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for (name, t) in params.iter() {
            model.params.set(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn forward(&self, params: &ParamSet) -> Result<Forward> {
        let e0 = initial_embeddings(&self.graph, &self.data, params)?;
        let nodes = propagate(&e0, &self.graph, params, &self.cfg.gcn())?;
        let users = user_rows(&self.graph, &nodes)?;
        let items = [item_rows(&self.graph, &nodes, Domain::S)?, item_rows(&self.graph, &nodes, Domain::T)?];
        Ok(Forward { nodes, users, items })
    }

    /// All loss terms for one batch under `params` (attached to a tape when gradients are wanted).
    pub fn step_loss(&self, params: &ParamSet, batch: &Batch) -> Result<StepLoss> {
        // The user-item term differentiates through the towers, so it needs a tape either way.
        let attached;
        let params = if self.cfg.alignment_active() && !params.iter().any(|(_, t)| t.requires_grad()) {
            attached = Tape::new().attach(params);
            &attached
        } else {
            params
        };
        let fwd = self.forward(params)?;
        let sup = supervised_loss(params, &fwd.users, &fwd.items, batch, self.cfg.lambda1)?;
        let mut user_user = Tensor::scalar(0.0);
        let mut user_item = Tensor::scalar(0.0);
        if self.cfg.alignment_active() {
            let is_overlap = |u: usize| self.graph.roles[u] == UserRole::Overlap;
            if !self.cfg.ablation.nu {
                let mut users: Vec<usize> = batch.examples.iter().map(|e| e.user).filter(|&u| is_overlap(u)).collect();
                users.sort_unstable();
                users.dedup();
                user_user = user_user_loss(params, &self.cfg.align(), &fwd.nodes, &self.graph, &self.two_hop, &users)?;
            }
            if !self.cfg.ablation.ni {
                let mut grads = Vec::with_capacity(2);
                for d in Domain::ALL {
                    let Some(df) = &sup.domains[d.index()] else { break };
                    let keep: Vec<usize> = (0..df.index.labels.len())
                        .filter(|&k| is_overlap(df.index.users[df.index.user_pos[k]]))
                        .collect();
                    if keep.is_empty() {
                        break;
                    }
                    let labels: Vec<f64> = keep.iter().map(|&k| df.index.labels[k]).collect();
                    let loss = bce(&df.y_hat.gather_rows(&keep)?, &labels)?;
                    let wrt = user_tower_params(params, d, self.cfg.grad_align_params)?;
                    grads.push(grad_vector(&loss, &wrt)?);
                }
                if grads.len() == 2 {
                    user_item = user_item_loss(&grads[0], &grads[1])?;
                }
            }
        }
        let total = sup.total.add(&user_user.add(&user_item)?.scale(self.cfg.lambda2)?)?;
        Ok(StepLoss { total, supervised: sup.total, user_user, user_item })
    }

    /// Post-step projections: unit prototypes, then optional `f32` rounding.
    fn finish_step(&mut self) -> Result<()> {
        let c = normalize_rows(self.params.expect(PROTOTYPES)?);
        self.params.set(PROTOTYPES, c)?;
        if self.cfg.f32_params {
            self.params = round_f32(&self.params);
        }
        Ok(())
    }

    pub fn save(&self, blob: &Path, extra: serde_json::Value) -> Result<checkpoint::Manifest> {
        let meta = serde_json::json!({
            "config": self.cfg,
            "data_hash": self.data.content_hash(),
            "extra": extra,
        });
        Ok(checkpoint::save(blob, &self.params, meta)?)
    }

    /// Loads parameters saved by [`save`](Self::save) onto the given training data.
    pub fn load(blob: &Path, data: Dataset) -> Result<Self> {
        let (params, manifest) = checkpoint::load(blob)?;
        let cfg: TrainConfig = serde_json::from_value(manifest.metadata["config"].clone())?;
        if let Some(h) = manifest.metadata["data_hash"].as_str() {
            if h != data.content_hash() {
                return Err(EngineError::Config("checkpoint was trained on different data".into()));
            }
        }
        Self::from_params(data, &cfg, params)
    }
}

/// A tower collapsing to a zero output mid-training is reported as divergence.
fn degenerate(e: &EngineError) -> Option<String> {
    match e {
        EngineError::Tower(t @ TowerError::DegenerateOutput(_))
        | EngineError::Align(AlignError::Tower(t @ TowerError::DegenerateOutput(_))) => Some(t.to_string()),
        _ => None,
    }
}

/// Trains on `data` (training view) for `cfg.epochs` epochs.
pub fn train(data: Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::with_rng(data, cfg, &mut rng)?;
    let mut adam = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    info!("graph: {:?}", model.graph.stats());
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(&model.data, cfg.batch_size, cfg.neg_ratio, &mut rng)?;
        let mut sums = [0.0; 4];
        for (step, batch) in batches.iter().enumerate() {
            let tape = Tape::new();
            let attached = tape.attach(&model.params);
            let loss = model.step_loss(&attached, batch).map_err(|e| match degenerate(&e) {
                Some(detail) => EngineError::Divergence { epoch, step, detail },
                None => e,
            })?;
            let vals = [loss.total.item(), loss.supervised.item(), loss.user_user.item(), loss.user_item.item()];
            if !vals.iter().all(|v| v.is_finite()) {
                return Err(EngineError::Divergence { epoch, step, detail: format!("loss terms {vals:?}") });
            }
            let grads = backward_params(&loss.total, &attached, false)?;
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(EngineError::Divergence { epoch, step, detail: format!("non-finite gradient for {name}") });
            }
            adam.step(&mut model.params, &grads)?;
            model.finish_step()?;
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
        }
        let n = batches.len().max(1) as f64;
        let e = EpochLoss {
            epoch,
            total: sums[0] / n,
            supervised: sums[1] / n,
            user_user: sums[2] / n,
            user_item: sums[3] / n,
        };
        info!(
            "epoch {epoch}: loss {:.5} (supervised {:.5}, user-user {:.5}, user-item {:.5})",
            e.total, e.supervised, e.user_user, e.user_item
        );
        curve.push(e);
    }
    Ok(TrainOutcome { model, curve })
}
