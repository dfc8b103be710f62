//! Adam training of the embedding network, one instance per step.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Instance};
use crate::inference::{self, ClusterResult, SelectMethod};
use crate::losses::{self, LossError, LossKind};
use crate::metrics::{self, MetricReport};
use crate::network::{
    self, init_params, read_checkpoint, write_checkpoint, Checkpoint, NetworkConfig, NetworkError, NetworkParams,
    OptimizerBlob,
};
use crate::rng;

const SHUFFLE_TAG: u64 = 0x5348_5546;
const MASK_TAG: u64 = 0x4d41_534b;
const VAL_TAG: u64 = 0x5641_4c31;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("every instance failed in epoch {epoch}: {last}")]
    AllInstancesSkipped { epoch: usize, last: String },
    #[error("cluster {cluster} of {instance} has {size} point(s); at least 2 are needed")]
    ClusterTooSmall { instance: String, cluster: usize, size: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("resume: {0}")]
    Resume(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    300
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_fraction() -> f64 {
    1.0
}
fn default_val_restarts() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_fraction")]
    pub label_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only the final one).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Divide losses by the labeled point count (pairwise: its square).
    #[serde(default)]
    pub mean_normalize: bool,
    /// K-means restarts used when scoring the validation split.
    #[serde(default = "default_val_restarts")]
    pub val_restarts: usize,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        TrainConfig {
            loss,
            learning_rate: default_lr(),
            epochs: default_epochs(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            label_fraction: default_fraction(),
            seed: 0,
            checkpoint_every: 0,
            mean_normalize: false,
            val_restarts: default_val_restarts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad("label_fraction must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.val_restarts == 0 {
            return bad("val_restarts must be at least 1");
        }
        Ok(())
    }
}

/// Adam moments, flattened in parameter serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let n = params.param_count();
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything is
/// modified, so a failed step leaves `params` and `state` untouched.
pub fn adam_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    let p = params.param_count();
    if grads.param_count() != p || state.m.len() != p || state.v.len() != p {
        return Err(TrainError::Config("optimizer state does not match parameters".into()));
    }
    let grad_tensors = grads.tensors();
    if let Some((name, _)) = grad_tensors.iter().find(|(_, t)| t.iter().any(|v| !v.is_finite())) {
        return Err(TrainError::NonFiniteGradient(name.clone()));
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let mut offset = 0;
    for (theta, (_, g)) in params.tensors_mut().into_iter().zip(grad_tensors) {
        let m = &mut state.m[offset..offset + g.len()];
        let v = &mut state.v[offset..offset + g.len()];
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            theta[i] -= config.learning_rate * mhat / (vhat.sqrt() + config.adam_eps);
        }
        offset += g.len();
    }
    Ok(())
}

/// Stratified labeled-point mask: about `fraction` of each cluster (exact
/// total round(fraction·N) by largest remainder), at least 2 per cluster.
pub fn subsample_labels(instance: &Instance, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainError::Config("label_fraction must be in (0, 1]".into()));
    }
    let index = losses::ClusterIndex::from_labels(&instance.labels);
    for (c, members) in index.members.iter().enumerate() {
        if members.len() < 2 {
            return Err(TrainError::ClusterTooSmall {
                instance: instance.name.clone(),
                cluster: c,
                size: members.len(),
            });
        }
    }
    let n = instance.len();
    if fraction == 1.0 {
        return Ok(vec![true; n]);
    }
    let total = (fraction * n as f64).round() as usize;
    let exact: Vec<f64> = index.members.iter().map(|m| fraction * m.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    // Largest fractional part first; stable, so ties go to the lower cluster.
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = total.saturating_sub(quota.iter().sum());
    for &c in &order {
        if left == 0 {
            break;
        }
        quota[c] += 1;
        left -= 1;
    }
    let mut rng = rng::rng(seed);
    let mut mask = vec![false; n];
    for (members, q) in index.members.iter().zip(quota) {
        let take = q.clamp(2, members.len());
        for &i in members.choose_multiple(&mut rng, take) {
            mask[i] = true;
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_error: Option<f64>,
    pub skipped: usize,
    /// Not serialized and excluded from equality: wall-clock differs between
    /// otherwise identical runs.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        let key = |r: &EpochRecord| (r.epoch, r.train_loss.to_bits(), r.val_loss.map(f64::to_bits), r.val_error.map(f64::to_bits), r.skipped);
        self.records.len() == other.records.len() && self.records.iter().zip(&other.records).all(|(a, b)| key(a) == key(b))
    }
}

impl TrainLog {
    /// `epoch,train_loss,val_loss,val_error`; missing validation values are empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,val_loss,val_error\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, opt(r.val_loss), opt(r.val_error)));
        }
        out
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.wall_seconds).sum()
    }
}

/// Embeds an instance and clusters it with K-means, picking K with `method`
/// when `k` is None.
pub fn cluster_instance(
    params: &NetworkParams,
    net: &NetworkConfig,
    instance: &Instance,
    k: Option<usize>,
    method: SelectMethod,
    restarts: usize,
    seed: u64,
) -> Result<(network::Embedding, ClusterResult)> {
    let emb = network::embed(instance.points.view(), params, net)?;
    let k = match k {
        Some(k) => k,
        None => inference::select_k(emb.z.view(), method, inference::DEFAULT_K_MAX, restarts, seed)?,
    };
    let result = inference::kmeans(emb.z.view(), k, restarts, seed)?;
    Ok((emb, result))
}

/// Clusters with the ground-truth K and scores against the labels.
pub fn evaluate_instance(params: &NetworkParams, net: &NetworkConfig, instance: &Instance, restarts: usize, seed: u64) -> Result<MetricReport> {
    let (_, result) = cluster_instance(params, net, instance, Some(instance.num_clusters()), SelectMethod::Sod, restarts, seed)?;
    Ok(metrics::evaluate(&result.assignments, &instance.labels)?)
}

#[derive(Serialize, Deserialize)]
struct TrainingBlob {
    config: TrainConfig,
    log: TrainLog,
}

/// Owns the parameters, optimizer state and log of one training run.
pub struct Trainer<'a> {
    train: &'a Dataset,
    val: Option<&'a Dataset>,
    net: NetworkConfig,
    config: TrainConfig,
    params: NetworkParams,
    adam: AdamState,
    masks: Vec<Vec<bool>>,
    epoch: usize,
    log: TrainLog,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a Dataset, val: Option<&'a Dataset>, net: NetworkConfig, config: TrainConfig) -> Result<Self> {
        let params = init_params(&net)?;
        let adam = AdamState::new(&params);
        Self::assemble(train, val, net, config, params, adam, 0, TrainLog::default())
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    /// `config` must equal the checkpointed config except for `epochs`.
    pub fn resume(train: &'a Dataset, val: Option<&'a Dataset>, checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        let blob: TrainingBlob = checkpoint
            .header
            .training
            .clone()
            .ok_or_else(|| TrainError::Resume("checkpoint has no training state".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| TrainError::Resume(e.to_string())))?;
        let mut expected = blob.config.clone();
        expected.epochs = config.epochs;
        if expected != config {
            return Err(TrainError::Resume("training config differs from the checkpointed one".into()));
        }
        let opt = checkpoint
            .optimizer
            .ok_or_else(|| TrainError::Resume("checkpoint has no optimizer state".into()))?;
        let adam = AdamState {
            m: opt.m,
            v: opt.v,
            t: opt.step,
        };
        let epoch = checkpoint.header.epoch;
        if blob.log.records.len() != epoch {
            return Err(TrainError::Resume("log length does not match epoch".into()));
        }
        Self::assemble(train, val, checkpoint.header.config, config, checkpoint.params, adam, epoch, blob.log)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        train: &'a Dataset,
        val: Option<&'a Dataset>,
        net: NetworkConfig,
        config: TrainConfig,
        params: NetworkParams,
        adam: AdamState,
        epoch: usize,
        log: TrainLog,
    ) -> Result<Self> {
        config.validate()?;
        net.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        for inst in train.instances.iter().chain(val.iter().flat_map(|v| v.instances.iter())) {
            if inst.dim() != net.input_dim {
                return Err(TrainError::Network(NetworkError::Shape(format!(
                    "instance {} has dimension {}, network expects {}",
                    inst.name,
                    inst.dim(),
                    net.input_dim
                ))));
            }
        }
        let masks = train
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| subsample_labels(inst, config.label_fraction, rng::derive(config.seed ^ MASK_TAG, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer {
            train,
            val,
            net,
            config,
            params,
            adam,
            masks,
            epoch,
            log,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn net_config(&self) -> &NetworkConfig {
        &self.net
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// One forward/loss/backward/Adam step on a single training instance.
    /// Returns the loss value before the update.
    pub fn step(&mut self, index: usize) -> Result<f64> {
        let inst = &self.train.instances[index];
        let (emb, tape) = network::forward(inst.points.view(), &self.params, &self.net)?;
        let mask = (self.config.label_fraction < 1.0).then_some(self.masks[index].as_slice());
        let eval = losses::evaluate_masked(self.config.loss, emb.z.view(), &inst.labels, mask, self.config.mean_normalize)?;
        if !eval.is_finite() {
            return Err(TrainError::NonFiniteGradient("loss".into()));
        }
        let grads = network::backward(&tape, &self.params, eval.grad.view())?;
        adam_step(&mut self.params, &grads.params, &mut self.adam, &self.config)?;
        Ok(eval.value)
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let started = Instant::now();
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng::rng_for(self.config.seed ^ SHUFFLE_TAG, epoch as u64));
        let (mut total, mut done, mut skipped) = (0.0, 0usize, 0usize);
        let mut last_err = String::new();
        for i in order {
            match self.step(i) {
                Ok(v) => {
                    total += v;
                    done += 1;
                }
                Err(e @ (TrainError::Loss(_) | TrainError::NonFiniteGradient(_))) => {
                    log::warn!("epoch {epoch}: skipping {}: {e}", self.train.instances[i].name);
                    last_err = e.to_string();
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if done == 0 {
            return Err(TrainError::AllInstancesSkipped { epoch, last: last_err });
        }
        let (val_loss, val_error) = match self.val {
            Some(val) if !val.is_empty() => {
                let (l, e) = self.validate(val, epoch)?;
                (Some(l), Some(e))
            }
            _ => (None, None),
        };
        self.epoch = epoch;
        self.log.records.push(EpochRecord {
            epoch,
            train_loss: total / done as f64,
            val_loss,
            val_error,
            skipped,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        let rec = self.log.records.last().expect("just pushed");
        log::info!("epoch {epoch}: train {:.6} val {:?} err {:?}", rec.train_loss, rec.val_loss, rec.val_error);
        Ok(rec)
    }

    /// Mean loss and mean K-means error rate (ground-truth K) on `val`.
    fn validate(&self, val: &Dataset, epoch: usize) -> Result<(f64, f64)> {
        let (mut loss_sum, mut loss_n, mut err_sum) = (0.0, 0usize, 0.0);
        for (i, inst) in val.instances.iter().enumerate() {
            let emb = network::embed(inst.points.view(), &self.params, &self.net)?;
            if let Ok(e) = losses::evaluate_masked(self.config.loss, emb.z.view(), &inst.labels, None, self.config.mean_normalize) {
                loss_sum += e.value;
                loss_n += 1;
            }
            let seed = rng::derive(self.config.seed ^ VAL_TAG, (epoch as u64) << 32 | i as u64);
            let c = inference::kmeans(emb.z.view(), inst.num_clusters(), self.config.val_restarts, seed)?;
            err_sum += metrics::error_rate(&c.assignments, &inst.labels)?;
        }
        let mean_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN };
        Ok((mean_loss, err_sum / val.len() as f64))
    }

    /// Runs the remaining epochs, writing `epoch_NNNN.ckpt` to
    /// `checkpoint_dir` every `checkpoint_every` epochs and `final.ckpt` at
    /// the end.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<()> {
        while !self.is_done() {
            self.run_epoch()?;
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.epoch % every == 0 && !self.is_done() {
                    write_checkpoint(&dir.join(format!("epoch_{:04}.ckpt", self.epoch)), &self.checkpoint()?)?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            write_checkpoint(&dir.join("final.ckpt"), &self.checkpoint()?)?;
        }
        Ok(())
    }

    /// Parameters, Adam moments, configs and log so far.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let blob = TrainingBlob {
            config: self.config.clone(),
            log: self.log.clone(),
        };
        let mut ck = Checkpoint::new(self.net.clone(), self.params.clone(), self.epoch, self.config.seed).with_optimizer(OptimizerBlob {
            step: self.adam.t,
            m: self.adam.m.clone(),
            v: self.adam.v.clone(),
        });
        ck.header.training = Some(serde_json::to_value(blob).map_err(|e| TrainError::Resume(e.to_string()))?);
        Ok(ck)
    }

    pub fn into_parts(self) -> (NetworkParams, TrainLog) {
        (self.params, self.log)
    }
}

/// Trains from a fresh initialization for `config.epochs` epochs.
pub fn train(dataset: &Dataset, net: &NetworkConfig, config: &TrainConfig, val: Option<&Dataset>) -> Result<(NetworkParams, TrainLog)> {
    let mut trainer = Trainer::new(dataset, val, net.clone(), config.clone())?;
    trainer.run(None)?;
    Ok(trainer.into_parts())
}

/// Loads a checkpoint and trains until `config.epochs`.
pub fn resume_from(path: &Path, dataset: &Dataset, config: &TrainConfig, val: Option<&Dataset>, checkpoint_dir: Option<&Path>) -> Result<(NetworkParams, TrainLog)> {
    let ck = read_checkpoint(path)?;
    let mut trainer = Trainer::resume(dataset, val, ck, config.clone())?;
    trainer.run(checkpoint_dir)?;
    Ok(trainer.into_parts())
}

/// One leave-one-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: String,
    pub report: MetricReport,
}

/// Trains one model per instance on all other instances and scores it on
/// the held-out one (ground-truth K).
pub fn leave_one_out(dataset: &Dataset, net: &NetworkConfig, config: &TrainConfig, restarts: usize) -> Result<Vec<FoldResult>> {
    if dataset.len() < 2 {
        return Err(TrainError::Config("leave-one-out needs at least 2 instances".into()));
    }
    let mut out = Vec::with_capacity(dataset.len());
    for (i, held) in dataset.instances.iter().enumerate() {
        let rest: Vec<Instance> = dataset
            .instances
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, inst)| inst.clone())
            .collect();
        let fold = Dataset::new(rest, dataset.split).map_err(|e| TrainError::Config(e.to_string()))?;
        let (params, _) = train(&fold, net, config, None)?;
        let report = evaluate_instance(&params, net, held, restarts, rng::derive(config.seed, i as u64))?;
        log::info!("fold {}: held out {} error {:.4}", i + 1, held.name, report.error_rate);
        out.push(FoldResult {
            held_out: held.name.clone(),
            report,
        });
    }
    Ok(out)
}

/// Path of the final checkpoint inside a training output directory.
pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("final.ckpt")
}
