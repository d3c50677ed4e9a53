use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, EngineError, EpochLoss, EvalReport, Model, Result, TrainConfig, Variant};
use crate::data::{Dataset, Domain, SplitPlan};

/// A trained model, its loss curve and its evaluation.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: Model,
    pub curve: Vec<EpochLoss>,
    pub report: EvalReport,
}

/// Severs `1 - ratio` of the overlapping users and remaps their target-domain test cases.
fn apply_overlap_ratio(train: Dataset, split: &SplitPlan, ratio: f64, seed: u64) -> (Dataset, SplitPlan) {
    if ratio >= 1.0 {
        return (train, split.clone());
    }
    let (severed, mapping) = train.sever_overlap(1.0 - ratio, seed);
    let mut split = split.clone();
    for case in split.cases.iter_mut().filter(|c| c.domain == Domain::T) {
        if let Ok(k) = mapping.binary_search_by_key(&case.user, |&(old, _)| old) {
            case.user = mapping[k].1;
        }
    }
    info!("overlap ratio {ratio}: severed {} users", mapping.len());
    (severed, split)
}

/// Trains on `ds` minus the split's held-out positives, then evaluates on the split.
pub fn run(ds: &Dataset, split: &SplitPlan, cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (train_view, split) = apply_overlap_ratio(ds.without_held_out(split), split, cfg.overlap_ratio, cfg.seed);
    let outcome = train(train_view, cfg)?;
    let report = evaluate(&outcome.model, &split)?;
    Ok(RunResult { model: outcome.model, curve: outcome.curve, report })
}

pub fn run_ablation(ds: &Dataset, split: &SplitPlan, cfg: &TrainConfig, variant: Variant) -> Result<RunResult> {
    run(ds, split, &cfg.with_variant(variant))
}

pub fn run_overlap(
    ds: &Dataset,
    split: &SplitPlan,
    cfg: &TrainConfig,
    ratios: &[f64],
) -> Result<Vec<(f64, RunResult)>> {
    ratios.iter().map(|&m| run(ds, split, &TrainConfig { overlap_ratio: m, ..cfg.clone() }).map(|r| (m, r))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Dim,
    Prototypes,
    Lambda2,
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Dim => vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
            SweepAxis::Prototypes => vec![32.0, 64.0, 128.0, 256.0, 512.0, 1024.0],
            SweepAxis::Lambda2 => vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
        }
    }

    pub fn apply(self, cfg: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut c = cfg.clone();
        let as_count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(EngineError::Config(format!("{self} takes positive integers, got {v}")))
            }
        };
        match self {
            SweepAxis::Dim => c.dim = as_count(value)?,
            SweepAxis::Prototypes => c.prototypes = as_count(value)?,
            SweepAxis::Lambda2 => c.lambda2 = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Dim => "dim",
            SweepAxis::Prototypes => "prototypes",
            SweepAxis::Lambda2 => "lambda2",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d" | "dim" => Ok(SweepAxis::Dim),
            "k" | "prototypes" => Ok(SweepAxis::Prototypes),
            "lambda2" | "l2" => Ok(SweepAxis::Lambda2),
            _ => Err(EngineError::Config(format!("unknown sweep axis {s:?} (dim, prototypes, lambda2)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub final_loss: Option<f64>,
    pub report: EvalReport,
}

pub fn run_sweep(
    ds: &Dataset,
    split: &SplitPlan,
    cfg: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|&value| {
            let c = axis.apply(cfg, value)?;
            info!("sweep {axis} = {value}");
            let r = run(ds, split, &c)?;
            Ok(SweepPoint { axis, value, final_loss: r.curve.last().map(|e| e.total), report: r.report })
        })
        .collect()
}

/// Writes `report.json` (full) and `metrics.json` (deterministic subset) into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("metrics.json"), report.metrics_json())?;
    Ok(())
}
