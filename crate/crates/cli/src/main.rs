//! `coast` command line: data preparation, synthetic data, training, evaluation
//! and the experiment runners.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use coast::data::{
    featurize, load_dataset, load_dataset_dir, read_attribute_table, split_leave_one_out, synth_generate,
    write_dataset_dir, write_feature_file, AttributeSchema, Dataset, DatasetPaths, FeatureSources, SplitPlan,
    SynthConfig,
};
use coast::engine::{
    evaluate, popularity_baseline, random_baseline, run, run_ablation, run_overlap, run_sweep, write_report, SweepAxis,
    TrainConfig, Variant,
};
use coast::tensor::{checkpoint, Tensor};
use coast::towers::GradScope;

#[derive(Parser, Debug)]
#[command(name = "coast", version, about = "Cross-domain recommendation with graph convolution and interest alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter a raw interaction log, featurize attribute tables and write a dataset directory.
    Prepare(PrepareArgs),
    /// Generate a synthetic two-domain dataset with ground-truth interest labels.
    Synth(SynthArgs),
    /// Train on a dataset directory and evaluate on a leave-one-out split.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a saved split.
    Eval(EvalArgs),
    /// Train one or more ablation variants.
    Ablate(AblateArgs),
    /// Train at several overlap ratios.
    Overlap(OverlapArgs),
    /// Sweep one hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Interaction TSV: user, item, domain, rating[, timestamp].
    #[arg(long)]
    interactions: PathBuf,
    /// Attribute table for users (header row, then `id<TAB>attr...`).
    #[arg(long)]
    user_attrs: Option<PathBuf>,
    /// Column kinds of the user table, e.g. `age:numeric,city:categorical,bio:text:32`.
    #[arg(long, requires = "user_attrs")]
    user_schema: Option<String>,
    /// Attribute tables for source- and target-domain items (featurized jointly).
    #[arg(long, num_args = 2, value_names = ["S", "T"])]
    item_attrs: Option<Vec<PathBuf>>,
    #[arg(long, requires = "item_attrs")]
    item_schema: Option<String>,
    /// Feature width after featurization.
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    #[arg(long, default_value_t = 5)]
    min_interactions: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Users per domain.
    #[arg(long, default_value_t = 2000)]
    users: usize,
    /// Users present in both domains.
    #[arg(long, default_value_t = 600)]
    overlap: usize,
    /// Items per domain.
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset directory (interactions.tsv plus feature files).
    #[arg(long)]
    data: PathBuf,
    /// Minimum interactions per user and item applied at load time.
    #[arg(long, default_value_t = 1)]
    min_interactions: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scope {
    All,
    LastLayer,
}

/// Hyperparameters; unset flags keep the library defaults.
#[derive(Args, Debug, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Embedding dimension D.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Number of prototypes K.
    #[arg(long)]
    prototypes: Option<usize>,
    #[arg(long)]
    proj_dim: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    neg_ratio: Option<usize>,
    #[arg(long)]
    overlap_ratio: Option<f64>,
    #[arg(long, value_enum)]
    grad_scope: Option<Scope>,
    /// Ablation variants to apply (NF, NS, NM, NU, NI); repeatable.
    #[arg(long = "variant")]
    variants: Vec<String>,
}

impl HyperArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig { seed: self.seed, ..Default::default() };
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { c.$f = v; } )*};
        }
        set!(
            epochs,
            dim,
            layers,
            prototypes,
            proj_dim,
            temperature,
            lambda1,
            lambda2,
            lr,
            batch_size,
            neg_ratio,
            overlap_ratio
        );
        if let Some(s) = self.grad_scope {
            c.grad_align_params = match s {
                Scope::All => GradScope::All,
                Scope::LastLayer => GradScope::LastLayer,
            };
        }
        for v in &self.variants {
            c = c.with_variant(v.parse()?);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory for the checkpoint, split and reports.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Dataset directory; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Variants to compare against the full model; default all five.
    #[arg(long = "ablation", value_delimiter = ',')]
    ablations: Vec<String>,
    #[arg(long, default_value = "ablate")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OverlapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1.0")]
    ratios: Vec<f64>,
    #[arg(long, default_value = "overlap")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// dim, prototypes or lambda2.
    #[arg(long)]
    axis: SweepAxis,
    /// Values to try; default is the axis's standard grid.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_split(data: &DataArgs, seed: u64) -> Result<(Dataset, SplitPlan)> {
    let ds = load_dataset_dir(&data.data, data.min_interactions)
        .with_context(|| format!("loading dataset from {}", data.data.display()))?;
    let split = split_leave_one_out(&ds, seed)?;
    info!("{:?}; {} test cases", ds.stats(), split.cases.len());
    Ok((ds, split))
}

fn featurize_table(path: &Path, schema: &str, dim: usize) -> Result<(Vec<String>, Tensor)> {
    let (_, ids, rows) = read_attribute_table(path)?;
    Ok((ids, featurize(&AttributeSchema::parse(schema)?, &rows, dim)?))
}

fn prepare(a: PrepareArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let paths = DatasetPaths::new(&a.out);
    let mut sources = FeatureSources { fallback_dim: Some(a.feature_dim), ..Default::default() };
    if let (Some(table), Some(schema)) = (&a.user_attrs, &a.user_schema) {
        let (ids, f) = featurize_table(table, schema, a.feature_dim)?;
        write_feature_file(&paths.user_features, &ids, &f)?;
        sources.users = Some(paths.user_features.clone());
    } else if a.user_attrs.is_some() {
        bail!("--user-attrs needs --user-schema");
    }
    if let (Some(tables), Some(schema)) = (&a.item_attrs, &a.item_schema) {
        // Both domains share one fitted encoding.
        let schema = AttributeSchema::parse(schema)?;
        let (_, ids_s, rows_s) = read_attribute_table(&tables[0])?;
        let (_, ids_t, rows_t) = read_attribute_table(&tables[1])?;
        let all: Vec<Vec<String>> = rows_s.iter().chain(&rows_t).cloned().collect();
        let f = featurize(&schema, &all, a.feature_dim)?;
        let n = ids_s.len();
        let rows = |r: std::ops::Range<usize>| -> Result<Tensor> {
            Ok(Tensor::new(
                [r.len(), a.feature_dim],
                f.data()[r.start * a.feature_dim..r.end * a.feature_dim].to_vec(),
            )?)
        };
        write_feature_file(&paths.item_features[0], &ids_s, &rows(0..n)?)?;
        write_feature_file(&paths.item_features[1], &ids_t, &rows(n..n + ids_t.len())?)?;
        sources.items = [Some(paths.item_features[0].clone()), Some(paths.item_features[1].clone())];
    } else if a.item_attrs.is_some() {
        bail!("--item-attrs needs --item-schema");
    }
    let ds = load_dataset(&a.interactions, &sources, a.min_interactions)?;
    write_dataset_dir(&ds, &a.out, None)?;
    let stats = ds.stats();
    write_json(&a.out.join("stats.json"), &stats)?;
    println!("{stats:?}");
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let data = synth_generate(&SynthConfig::with_domain_users(a.users, a.overlap, a.items, a.seed)?)?;
    write_dataset_dir(&data.dataset, &a.out, Some(&data.interests))?;
    println!("{:?} -> {}", data.dataset.stats(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.hyper.config()?;
    let (ds, split) = load_split(&a.data, cfg.seed)?;
    let r = run(&ds, &split, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let data_dir = fs::canonicalize(&a.data.data)?;
    r.model
        .save(&a.out.join("model.bin"), json!({ "data_dir": data_dir, "min_interactions": a.data.min_interactions }))?;
    write_json(&a.out.join("split.json"), &split)?;
    write_json(&a.out.join("curve.json"), &r.curve)?;
    write_report(&a.out, &r.report)?;
    println!("{}", r.report.metrics_json());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (_, manifest) = checkpoint::load(&a.checkpoint)?;
    let extra = &manifest.metadata["extra"];
    let data_dir = match (&a.data, extra["data_dir"].as_str()) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => bail!("checkpoint does not record its dataset; pass --data"),
    };
    let min = extra["min_interactions"].as_u64().unwrap_or(1) as usize;
    let ds = load_dataset_dir(&data_dir, min)?;
    let split: SplitPlan = serde_json::from_str(&fs::read_to_string(&a.split)?)
        .with_context(|| format!("parsing split {}", a.split.display()))?;
    let model = coast::engine::Model::load(&a.checkpoint, ds.without_held_out(&split))?;
    let report = evaluate(&model, &split)?;
    let out = a.out.unwrap_or_else(|| a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
    write_report(&out, &report)?;
    println!("{}", report.metrics_json());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.hyper.config()?;
    let (ds, split) = load_split(&a.data, cfg.seed)?;
    let variants: Vec<Variant> = if a.ablations.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.ablations.iter().map(|v| v.parse()).collect::<Result<_, _>>()?
    };
    let full = run(&ds, &split, &cfg)?;
    write_report(&a.out.join("full"), &full.report)?;
    let mut summary = vec![json!({ "variant": "full", "metrics": full.report.domains })];
    for v in variants {
        let r = run_ablation(&ds, &split, &cfg, v)?;
        write_report(&a.out.join(v.to_string()), &r.report)?;
        summary.push(json!({ "variant": v.to_string(), "metrics": r.report.domains }));
    }
    summary.push(json!({ "variant": "random", "metrics": random_baseline(&split, cfg.seed)? }));
    summary.push(
        json!({ "variant": "popularity", "metrics": popularity_baseline(&ds.without_held_out(&split), &split)? }),
    );
    write_json(&a.out.join("summary.json"), &summary)?;
    Ok(())
}

fn overlap(a: OverlapArgs) -> Result<()> {
    let cfg = a.hyper.config()?;
    if let Some(m) = a.ratios.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        bail!("overlap ratio {m} outside [0, 1]");
    }
    let (ds, split) = load_split(&a.data, cfg.seed)?;
    let mut summary = Vec::new();
    for (m, r) in run_overlap(&ds, &split, &cfg, &a.ratios)? {
        write_report(&a.out.join(format!("ratio_{m}")), &r.report)?;
        summary.push(json!({ "overlap_ratio": m, "metrics": r.report.domains }));
    }
    write_json(&a.out.join("summary.json"), &summary)?;
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = a.hyper.config()?;
    let (ds, split) = load_split(&a.data, cfg.seed)?;
    let values = if a.values.is_empty() { a.axis.default_values() } else { a.values.clone() };
    let points = run_sweep(&ds, &split, &cfg, a.axis, &values)?;
    write_json(&a.out.join(format!("sweep_{}.json", a.axis)), &points)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Overlap(a) => overlap(a),
        Command::Sweep(a) => sweep(a),
    }
}
