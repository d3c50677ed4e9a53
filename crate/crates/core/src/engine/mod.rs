//! Joint training, ranking evaluation and experiment runners.
//!
//! A training step propagates the whole graph, scores the batch with the
//! domain towers, adds the alignment losses over the batch's overlapping users
//! and takes one Adam step on every parameter:
//! `L = L_s + λ2 (L_UU + L_UI)`.

mod config;
mod eval;
mod experiments;
mod model;
mod optim;

use thiserror::Error;

pub use config::{Ablation, TrainConfig, Variant};
pub use eval::{
    evaluate, evaluate_with, metrics_from_ranks, popularity_baseline, random_baseline, rank_of, thread_count,
    DomainMetrics, EvalReport, Scorer, TOP_N,
};
pub use experiments::{run, run_ablation, run_overlap, run_sweep, write_report, RunResult, SweepAxis, SweepPoint};
pub use model::{train, EpochLoss, Forward, Model, StepLoss, TrainOutcome};
pub use optim::Adam;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence { epoch: usize, step: usize, detail: String },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Gcn(#[from] crate::gcn::GcnError),
    #[error(transparent)]
    Tower(#[from] crate::towers::TowerError),
    #[error(transparent)]
    Align(#[from] crate::align::AlignError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EngineError>;
