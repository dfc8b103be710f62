//! Clustering losses on the embedding Z (K_e×N, one column per point) and
//! their exact gradients ∂L/∂Z.
//!
//! Pairwise losses compare the reconstructed affinity K̂ = ZᵀZ with the ideal
//! affinity K = YᵀY. The cluster-statistics losses work on cluster means
//! μ_l and scatters s_l = Σ_{i∈C_l} ‖z_i − μ_l‖².

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::OneHotLabels;

/// Added inside both logarithms of the inter/intra losses.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss needs at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("no labeled points")]
    NoPoints,
    #[error("unknown loss {0:?} (expected l2, ce, mimi, maxinter, minintra or skm)")]
    UnknownLoss(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L2,
    Ce,
    Mimi,
    #[serde(rename = "maxinter")]
    MaxInter,
    #[serde(rename = "minintra")]
    MinIntra,
    Skm,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::L2,
        LossKind::Ce,
        LossKind::Mimi,
        LossKind::MaxInter,
        LossKind::MinIntra,
        LossKind::Skm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::Ce => "ce",
            LossKind::Mimi => "mimi",
            LossKind::MaxInter => "maxinter",
            LossKind::MinIntra => "minintra",
            LossKind::Skm => "skm",
        }
    }

    /// Whether the loss is undefined with a single cluster.
    pub fn needs_two_clusters(self) -> bool {
        matches!(self, LossKind::Mimi | LossKind::MaxInter)
    }

    fn is_pairwise(self) -> bool {
        matches!(self, LossKind::L2 | LossKind::Ce)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LossError::UnknownLoss(s.to_string()))
    }
}

/// A loss value with its gradient with respect to the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Array2<f64>,
}

impl LossEval {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.iter().all(|v| v.is_finite())
    }
}

/// Member indices of every cluster; clusters are the distinct labels, in
/// increasing label order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    pub members: Vec<Vec<usize>>,
}

impl ClusterIndex {
    /// Groups points by label. Label values need not be contiguous; unused
    /// label values produce no cluster.
    pub fn from_labels(labels: &[usize]) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        members.retain(|m| !m.is_empty());
        ClusterIndex { members }
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

fn check_shape(z: ArrayView2<f64>, n: usize) -> Result<()> {
    if z.ncols() != n {
        return Err(LossError::Shape(format!("{} embedding columns, {n} labels", z.ncols())));
    }
    if n == 0 {
        return Err(LossError::NoPoints);
    }
    Ok(())
}

/// Ideal affinity K = YᵀY and reconstructed affinity K̂ = ZᵀZ.
pub fn affinities(z: ArrayView2<f64>, y: &OneHotLabels) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shape(z, y.y.ncols())?;
    Ok((y.y.t().dot(&y.y), z.t().dot(&z)))
}

fn ideal_affinity(labels: &[usize]) -> Array2<f64> {
    let n = labels.len();
    Array2::from_shape_fn((n, n), |(i, j)| if labels[i] == labels[j] { 1.0 } else { 0.0 })
}

/// ‖K − K̂‖²_F, gradient −4 Z (K − K̂).
pub fn l2_regression(z: ArrayView2<f64>, labels: &[usize]) -> Result<LossEval> {
    check_shape(z, labels.len())?;
    let mut diff = ideal_affinity(labels);
    diff -= &z.t().dot(&z);
    let value = diff.iter().map(|d| d * d).sum();
    let grad = z.dot(&diff) * -4.0;
    Ok(LossEval { value, grad })
}

/// (softplus(x), σ(x)) sharing one exp(−|x|); stable for either sign.
fn softplus_sigmoid(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let sig = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (x.max(0.0) + e.ln_1p(), sig)
}

/// Σ_{i,j} H(k_ij, σ(k̂_ij)) over all ordered pairs including i = j.
///
/// Per pair −t·log σ(x) − (1−t)·log(1−σ(x)) = softplus(x) − t·x, so the
/// gradient with respect to K̂ is σ(K̂) − K and ∂L/∂Z = 2 Z (σ(K̂) − K).
pub fn cross_entropy(z: ArrayView2<f64>, labels: &[usize]) -> Result<LossEval> {
    check_shape(z, labels.len())?;
    let t = ideal_affinity(labels);
    let khat = z.t().dot(&z);
    let mut value = 0.0;
    let mut s = Array2::zeros(khat.raw_dim());
    ndarray::Zip::from(&mut s).and(&khat).and(&t).for_each(|s, &x, &t| {
        let (sp, sig) = softplus_sigmoid(x);
        value += sp - t * x;
        *s = sig - t;
    });
    let grad = z.dot(&s) * 2.0;
    Ok(LossEval { value, grad })
}

/// Cluster means (K_e×K) and scatters.
fn cluster_stats(z: ArrayView2<f64>, index: &ClusterIndex) -> (Array2<f64>, Vec<f64>) {
    let kc = index.num_clusters();
    let mut means = Array2::zeros((z.nrows(), kc));
    let mut scatters = vec![0.0; kc];
    for (l, members) in index.members.iter().enumerate() {
        let mu = z.select(Axis(1), members).mean_axis(Axis(1)).expect("nonempty cluster");
        scatters[l] = members
            .iter()
            .map(|&i| z.column(i).iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        means.column_mut(l).assign(&mu);
    }
    (means, scatters)
}

/// Closest pair of cluster means (m < n), ties to the lexicographically
/// smallest pair.
fn closest_pair(means: &Array2<f64>) -> (usize, usize, f64) {
    let k = means.ncols();
    let mut best = (0, 1, f64::INFINITY);
    for m in 0..k {
        for n in m + 1..k {
            let d: f64 = means
                .column(m)
                .iter()
                .zip(means.column(n))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.2 {
                best = (m, n, d);
            }
        }
    }
    best
}

/// Largest scatter, ties to the smallest cluster index.
fn widest_cluster(scatters: &[f64]) -> (usize, f64) {
    scatters
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (l, &s)| if s > acc.1 { (l, s) } else { acc })
}

/// Adds `coef · ∂d/∂Z` for d = ‖μ_m − μ_n‖².
fn add_inter_grad(grad: &mut Array2<f64>, index: &ClusterIndex, means: &Array2<f64>, m: usize, n: usize, coef: f64) {
    let delta: Array1<f64> = &means.column(m) - &means.column(n);
    let cm = 2.0 * coef / index.members[m].len() as f64;
    let cn = -2.0 * coef / index.members[n].len() as f64;
    for &i in &index.members[m] {
        grad.column_mut(i).scaled_add(cm, &delta);
    }
    for &i in &index.members[n] {
        grad.column_mut(i).scaled_add(cn, &delta);
    }
}

/// Adds `coef · ∂s_l/∂Z`; the terms through μ_l sum to zero.
fn add_intra_grad(grad: &mut Array2<f64>, z: ArrayView2<f64>, index: &ClusterIndex, means: &Array2<f64>, l: usize, coef: f64) {
    let mu = means.column(l);
    for &i in &index.members[l] {
        let mut col = grad.column_mut(i);
        for ((g, &zi), &m) in col.iter_mut().zip(z.column(i)).zip(mu) {
            *g += 2.0 * coef * (zi - m);
        }
    }
}

fn inter_intra(z: ArrayView2<f64>, labels: &[usize], inter: bool, intra: bool) -> Result<LossEval> {
    check_shape(z, labels.len())?;
    let index = ClusterIndex::from_labels(labels);
    if inter && index.num_clusters() < 2 {
        return Err(LossError::TooFewClusters(index.num_clusters()));
    }
    let (means, scatters) = cluster_stats(z, &index);
    let mut grad = Array2::zeros(z.raw_dim());
    let mut value = 0.0;
    if inter {
        let (m, n, d) = closest_pair(&means);
        value -= (d + LOG_EPS).ln();
        add_inter_grad(&mut grad, &index, &means, m, n, -1.0 / (d + LOG_EPS));
    }
    if intra {
        let (l, s) = widest_cluster(&scatters);
        value += (s + LOG_EPS).ln();
        add_intra_grad(&mut grad, z, &index, &means, l, 1.0 / (s + LOG_EPS));
    }
    Ok(LossEval { value, grad })
}

/// −log(min inter-cluster distance) + log(max intra-cluster scatter).
pub fn mimi(z: ArrayView2<f64>, labels: &[usize]) -> Result<LossEval> {
    inter_intra(z, labels, true, true)
}

/// Only the inter-cluster term of [`mimi`].
pub fn max_inter(z: ArrayView2<f64>, labels: &[usize]) -> Result<LossEval> {
    inter_intra(z, labels, true, false)
}

/// Only the intra-cluster term of [`mimi`].
pub fn min_intra(z: ArrayView2<f64>, labels: &[usize]) -> Result<LossEval> {
    inter_intra(z, labels, false, true)
}

/// Σ_l s_l: point-to-center distances under the ground-truth assignment.
pub fn supervised_kmeans(z: ArrayView2<f64>, labels: &[usize]) -> Result<LossEval> {
    check_shape(z, labels.len())?;
    let index = ClusterIndex::from_labels(labels);
    let (means, scatters) = cluster_stats(z, &index);
    let mut grad = Array2::zeros(z.raw_dim());
    for l in 0..index.num_clusters() {
        add_intra_grad(&mut grad, z, &index, &means, l, 1.0);
    }
    Ok(LossEval {
        value: scatters.iter().sum(),
        grad,
    })
}

pub fn evaluate(kind: LossKind, z: ArrayView2<f64>, labels: &[usize]) -> Result<LossEval> {
    match kind {
        LossKind::L2 => l2_regression(z, labels),
        LossKind::Ce => cross_entropy(z, labels),
        LossKind::Mimi => mimi(z, labels),
        LossKind::MaxInter => max_inter(z, labels),
        LossKind::MinIntra => min_intra(z, labels),
        LossKind::Skm => supervised_kmeans(z, labels),
    }
}

/// Evaluates `kind` on the labeled points only and scatters the gradient
/// back to all N columns (unlabeled columns get zero).
///
/// With `mean_normalize`, pairwise losses are divided by n² and the
/// supervised k-means loss by n, where n is the number of labeled points;
/// the log-ratio losses are left as they are.
pub fn evaluate_masked(
    kind: LossKind,
    z: ArrayView2<f64>,
    labels: &[usize],
    mask: Option<&[bool]>,
    mean_normalize: bool,
) -> Result<LossEval> {
    check_shape(z, labels.len())?;
    let mut eval = match mask {
        None => evaluate(kind, z, labels)?,
        Some(mask) => {
            if mask.len() != labels.len() {
                return Err(LossError::Shape(format!("mask has {} entries for {} points", mask.len(), labels.len())));
            }
            let keep: Vec<usize> = (0..labels.len()).filter(|&i| mask[i]).collect();
            if keep.is_empty() {
                return Err(LossError::NoPoints);
            }
            let sub_labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
            let sub = evaluate(kind, z.select(Axis(1), &keep).view(), &sub_labels)?;
            let mut grad = Array2::zeros(z.raw_dim());
            for (c, &i) in keep.iter().enumerate() {
                grad.column_mut(i).assign(&sub.grad.column(c));
            }
            LossEval { value: sub.value, grad }
        }
    };
    if mean_normalize {
        let n = mask.map_or(labels.len(), |m| m.iter().filter(|&&b| b).count()) as f64;
        let scale = if kind.is_pairwise() {
            1.0 / (n * n)
        } else if kind == LossKind::Skm {
            1.0 / n
        } else {
            1.0
        };
        eval.value *= scale;
        eval.grad *= scale;
    }
    Ok(eval)
}
