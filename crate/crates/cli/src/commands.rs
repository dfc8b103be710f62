//! Subcommand implementations. Every command writes into a fresh output
//! directory and echoes its resolved configuration there as `config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use subspacenet::dataio::{read_instance, write_dataset, Dataset, Instance, Split};
use subspacenet::geometry::{generate_scene, sequential_fit, SceneSpec, StructureKind};
use subspacenet::inference::{self, SelectMethod};
use subspacenet::metrics::{self, MetricReport};
use subspacenet::network::{read_checkpoint, NetworkConfig};
use subspacenet::rng;
use subspacenet::training::{cluster_instance, leave_one_out, Trainer};

use crate::config::{RunConfig, ScheduleEntry};
use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

/// Creates `dir`, refusing to reuse a non-empty directory.
pub fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        if entries.next().is_some() {
            return Err(CliError::Validation(format!("output directory {} is not empty", dir.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn echo_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_text(&out.join("config.json"), &(cfg.to_json() + "\n"))
}

/// Where a command reads its instances from.
#[derive(Debug, Clone)]
pub enum Input {
    Instance(PathBuf),
    Dataset { dir: PathBuf, split: Split },
}

impl Input {
    pub fn load(&self) -> Result<Vec<Instance>> {
        match self {
            Input::Instance(p) => Ok(vec![read_instance(p)?]),
            Input::Dataset { dir, split } => Ok(Dataset::load(dir, *split)?.instances),
        }
    }
}

fn split_tag(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    }
}

/// Scene used when the config has none: the LCE benchmark setting.
pub fn default_scene() -> SceneSpec {
    SceneSpec::lce(100, 0.05, 0)
}

/// Instance `index` of `split`, generated from the run seed alone.
pub fn generate_instance(scene: &SceneSpec, seed: u64, split: Split, index: usize) -> Result<Instance> {
    let s = rng::derive(seed, split_tag(split) << 40 | index as u64);
    let mut inst = generate_scene(&scene.with_seed(s))
        .map_err(|e| CliError::Runtime(format!("{} instance {index}: {e}", split.as_str())))?
        .instance;
    inst.name = format!("{}_{index:05}", split.as_str());
    Ok(inst)
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scene = cfg.scene.clone().unwrap_or_else(default_scene);
    scene.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    fresh_dir(out)?;
    let mut splits = Vec::new();
    for (split, count) in [(Split::Train, cfg.gen.train), (Split::Val, cfg.gen.val), (Split::Test, cfg.gen.test)] {
        let instances = (0..count)
            .map(|i| generate_instance(&scene, cfg.gen.seed, split, i))
            .collect::<Result<Vec<_>>>()?;
        splits.push(Dataset::new(instances, split)?);
    }
    write_dataset(out, &splits.iter().collect::<Vec<_>>())?;
    echo_config(out, cfg)?;
    log::info!("wrote {} instances to {}", splits.iter().map(Dataset::len).sum::<usize>(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_val_error: Option<f64>,
    pub wall_seconds: f64,
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.train.validate()?;
    let train = Dataset::load(data, Split::Train)?;
    if train.is_empty() {
        return Err(CliError::Validation(format!("{} has no training instances", data.display())));
    }
    let val = Dataset::load(data, Split::Val)?;
    let val = (!val.is_empty()).then_some(&val);
    let mut trainer = match resume {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            let expected = cfg.network.resolve(train.instances[0].dim())?;
            if ck.header.config != expected {
                return Err(CliError::Validation("checkpoint network config differs from the run config".into()));
            }
            Trainer::resume(&train, val, ck, cfg.train.clone())?
        }
        None => {
            let net = cfg.network.resolve(train.instances[0].dim())?;
            Trainer::new(&train, val, net, cfg.train.clone())?
        }
    };
    fresh_dir(out)?;
    echo_config(out, cfg)?;
    trainer.run(Some(out))?;
    let log = trainer.log();
    write_text(&out.join("train_log.csv"), &log.to_csv())?;
    write_json(&out.join("train_log.json"), log)?;
    let last = log.records.last().expect("at least one epoch");
    let summary = TrainSummary {
        epochs: last.epoch,
        final_train_loss: last.train_loss,
        final_val_error: last.val_error,
        wall_seconds: log.total_seconds(),
    };
    write_json(&out.join("timing.json"), &summary)?;
    Ok(summary)
}

/// Per-instance prediction file, shared by `cluster`, `baseline` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub name: String,
    pub method: String,
    pub k: usize,
    pub assignments: Vec<usize>,
    #[serde(default)]
    pub centroids: Vec<Vec<f64>>,
    #[serde(default)]
    pub residual: Option<f64>,
}

pub fn prediction_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("predictions").join(format!("{name}.json"))
}

pub fn read_prediction(path: &Path) -> Result<Prediction> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Embedding as CSV, one row per point.
pub fn embedding_csv(z: &Array2<f64>) -> String {
    let mut out = (0..z.nrows()).map(|i| format!("e{i}")).collect::<Vec<_>>().join(",") + "\n";
    for col in z.columns() {
        out.push_str(&col.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn load_network(checkpoint: &Path) -> Result<(NetworkConfig, subspacenet::NetworkParams)> {
    if !checkpoint.exists() {
        return Err(CliError::Validation(format!("checkpoint {} not found", checkpoint.display())));
    }
    let ck = read_checkpoint(checkpoint)?;
    Ok((ck.header.config, ck.params))
}

pub fn cmd_cluster(cfg: &RunConfig, checkpoint: &Path, input: &Input, out: &Path) -> Result<Vec<Prediction>> {
    let (net, params) = load_network(checkpoint)?;
    let instances = input.load()?;
    for inst in &instances {
        if inst.dim() != net.input_dim {
            return Err(CliError::Validation(format!(
                "instance {} has dimension {}, network expects {}",
                inst.name,
                inst.dim(),
                net.input_dim
            )));
        }
    }
    let inf = &cfg.inference;
    fresh_dir(out)?;
    echo_config(out, cfg)?;
    let method = match (inf.k, inf.method) {
        (Some(_), _) => "fixed".to_string(),
        (None, SelectMethod::Sod) => "sod".to_string(),
        (None, SelectMethod::Silh) => "silh".to_string(),
    };
    let mut preds = Vec::with_capacity(instances.len());
    for inst in &instances {
        let (emb, result) = cluster_instance(&params, &net, inst, inf.k, inf.method, inf.restarts, inf.seed)?;
        let pred = Prediction {
            name: inst.name.clone(),
            method: method.clone(),
            k: result.k(),
            assignments: result.assignments,
            centroids: result.centroids,
            residual: Some(result.residual),
        };
        write_json(&prediction_path(out, &inst.name), &pred)?;
        write_text(&out.join("embeddings").join(format!("{}.csv", inst.name)), &embedding_csv(&emb.z))?;
        preds.push(pred);
    }
    Ok(preds)
}

pub fn cmd_curve(cfg: &RunConfig, checkpoint: &Path, input: &Input, out: &Path) -> Result<Vec<(String, usize)>> {
    let (net, params) = load_network(checkpoint)?;
    let instances = input.load()?;
    fresh_dir(out)?;
    echo_config(out, cfg)?;
    let inf = &cfg.inference;
    let mut picks = Vec::new();
    for inst in &instances {
        let emb = subspacenet::network::embed(inst.points.view(), &params, &net)?;
        let k_max = inf.k_max.min(inst.len());
        let curve = inference::residual_curve(emb.z.view(), k_max, inf.restarts, inf.seed)?;
        write_text(&out.join("curves").join(format!("{}.csv", inst.name)), &curve.to_csv())?;
        let k = if k_max >= 3 { inference::select_k_sod(&curve)? } else { 1 };
        picks.push((inst.name.clone(), k));
    }
    let table: String = std::iter::once("instance,k_sod\n".to_string())
        .chain(picks.iter().map(|(n, k)| format!("{n},{k}\n")))
        .collect();
    write_text(&out.join("selected_k.csv"), &table)?;
    Ok(picks)
}

pub fn cmd_eval(pred_dir: &Path, data: &Path, split: Split, out: &Path) -> Result<Vec<(String, MetricReport)>> {
    let ds = Dataset::load(data, split)?;
    if ds.is_empty() {
        return Err(CliError::Validation(format!("split {} of {} is empty", split.as_str(), data.display())));
    }
    let mut rows = Vec::with_capacity(ds.len());
    for inst in &ds.instances {
        let path = prediction_path(pred_dir, &inst.name);
        let pred = read_prediction(&path)?;
        if pred.assignments.len() != inst.len() {
            return Err(CliError::Validation(format!(
                "{}: {} assignments for {} points",
                path.display(),
                pred.assignments.len(),
                inst.len()
            )));
        }
        rows.push((inst.name.clone(), metrics::evaluate(&pred.assignments, &inst.labels)?));
    }
    fresh_dir(out)?;
    write_text(&out.join("metrics.csv"), &metrics::to_csv(&rows))?;
    let reports: Vec<MetricReport> = rows.iter().map(|r| r.1).collect();
    write_json(&out.join("summary.json"), &metrics::summarize(&reports))?;
    Ok(rows)
}

/// Schedule from the config, or from the instance's `structures` metadata
/// (ordered by minimal sample size).
fn schedule_for(cfg: &RunConfig, inst: &Instance) -> Result<Vec<(StructureKind, usize)>> {
    let entries: Vec<ScheduleEntry> = if !cfg.baseline.schedule.is_empty() {
        cfg.baseline.schedule.clone()
    } else {
        let names = inst.meta.get("structures").ok_or_else(|| {
            CliError::Validation(format!("{}: no baseline schedule configured and no structures metadata", inst.name))
        })?;
        let mut kinds = names
            .split(',')
            .map(|k| k.parse::<StructureKind>().map_err(|e| CliError::Validation(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        kinds.sort_by_key(|k| k.minimal_support());
        kinds.into_iter().map(|kind| ScheduleEntry { kind, count: 1 }).collect()
    };
    Ok(entries.into_iter().map(|e| (e.kind, e.count)).collect())
}

pub fn cmd_baseline(cfg: &RunConfig, input: &Input, out: &Path) -> Result<Vec<Prediction>> {
    let instances = input.load()?;
    let b = &cfg.baseline;
    if !(b.threshold > 0.0) || b.iterations == 0 {
        return Err(CliError::Validation("baseline threshold and iterations must be positive".into()));
    }
    fresh_dir(out)?;
    echo_config(out, cfg)?;
    let mut preds = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let schedule = schedule_for(cfg, inst)?;
        let (assignments, models) = sequential_fit(inst, &schedule, b.threshold, b.iterations, rng::derive(b.seed, i as u64))?;
        let pred = Prediction {
            name: inst.name.clone(),
            method: "sequential".into(),
            k: models.len(),
            assignments,
            centroids: Vec::new(),
            residual: None,
        };
        write_json(&prediction_path(out, &inst.name), &pred)?;
        preds.push(pred);
    }
    Ok(preds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoocvRow {
    pub held_out: String,
    pub report: MetricReport,
}

pub fn cmd_loocv(cfg: &RunConfig, data: &Path, split: Split, out: &Path) -> Result<Vec<(String, MetricReport)>> {
    let ds = Dataset::load(data, split)?;
    if ds.is_empty() {
        return Err(CliError::Validation(format!("split {} of {} is empty", split.as_str(), data.display())));
    }
    let net = cfg.network.resolve(ds.instances[0].dim())?;
    cfg.train.validate()?;
    fresh_dir(out)?;
    echo_config(out, cfg)?;
    let folds = leave_one_out(&ds, &net, &cfg.train, cfg.inference.restarts)?;
    let rows: Vec<(String, MetricReport)> = folds.into_iter().map(|f| (f.held_out, f.report)).collect();
    write_text(&out.join("loocv.csv"), &metrics::to_csv(&rows))?;
    let reports: Vec<MetricReport> = rows.iter().map(|r| r.1).collect();
    write_json(&out.join("summary.json"), &metrics::summarize(&reports))?;
    Ok(rows)
}
