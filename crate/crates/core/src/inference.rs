//! K-means on embeddings, residual curves and number-of-clusters selection.

use ndarray::{Array2, ArrayView2};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;

pub const MAX_LLOYD_ITERS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 20;
pub const DEFAULT_K_MAX: usize = 10;
/// r(1) at or below this is treated as a flat curve (one cluster).
pub const FLAT_RESIDUAL: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("K = {k} is invalid for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("restarts must be at least 1")]
    NoRestarts,
    #[error("K_max = {0} is too small for this selector")]
    KMaxTooSmall(usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, InferenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMethod {
    Sod,
    #[serde(alias = "silhouette")]
    Silh,
}

impl std::str::FromStr for SelectMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sod" => Ok(SelectMethod::Sod),
            "silh" | "silhouette" => Ok(SelectMethod::Silh),
            _ => Err(format!("unknown selection method {s:?} (expected sod or silh)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    /// One centroid per cluster, each of the embedding dimension.
    pub centroids: Vec<Vec<f64>>,
    pub residual: f64,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        self.assignments.iter().for_each(|&a| sizes[a] += 1);
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Column-major copy of the points, one Vec per point.
fn columns(z: ArrayView2<f64>) -> Vec<Vec<f64>> {
    z.columns().into_iter().map(|c| c.to_vec()).collect()
}

/// Member means, accumulated in point-index order.
fn means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// Σ_i ‖z_i − μ_{a_i}‖² with μ the member means, summed in point order.
pub fn partition_residual(z: ArrayView2<f64>, assignments: &[usize], k: usize) -> f64 {
    let points = columns(z);
    let (mu, _) = means(&points, assignments, k);
    points.iter().zip(assignments).map(|(p, &a)| sq_dist(p, &mu[a])).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(p, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point coincides with a chosen centroid.
            Err(_) => rng.gen_range(0..n),
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Moves the point farthest from its centroid (among clusters that can
/// spare one) into each empty cluster.
fn repair_empty(points: &[Vec<f64>], assignments: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assignments.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let (far, _) = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        assignments[far] = empty;
    }
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let mut centroids = kmeans_pp(points, k, rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    repair_empty(points, &mut assignments, &centroids, k);
    for _ in 0..MAX_LLOYD_ITERS {
        centroids = means(points, &assignments, k).0;
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        repair_empty(points, &mut next, &centroids, k);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let centroids = means(points, &assignments, k).0;
    let residual = points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
    (assignments, centroids, residual)
}

/// Best-of-`restarts` Lloyd's algorithm from k-means++ seeds. Ties in the
/// residual keep the earliest restart.
pub fn kmeans(z: ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> Result<ClusterResult> {
    let n = z.ncols();
    if k == 0 || k > n {
        return Err(InferenceError::InvalidK { k, n });
    }
    if restarts == 0 {
        return Err(InferenceError::NoRestarts);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::NonFinite);
    }
    let points = columns(z);
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for r in 0..restarts {
        let mut g = rng::rng_for(seed, r as u64);
        let run = lloyd(&points, k, &mut g);
        if best.as_ref().map_or(true, |b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (assignments, centroids, residual) = best.expect("at least one restart");
    Ok(ClusterResult {
        assignments,
        centroids,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCurve {
    /// Envelope-smoothed r(K), index K−1.
    pub r: Vec<f64>,
    /// Best-of-restarts residuals before the envelope pass.
    pub raw: Vec<f64>,
    pub restarts: usize,
}

impl ResidualCurve {
    pub fn k_max(&self) -> usize {
        self.r.len()
    }

    pub fn at(&self, k: usize) -> f64 {
        self.r[k - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,r,raw\n");
        for (i, (r, raw)) in self.r.iter().zip(&self.raw).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, r, raw));
        }
        out
    }
}

/// r(K) for K = 1..=k_max, made non-increasing by r(K) ← min(r(K), r(K−1)).
pub fn residual_curve(z: ArrayView2<f64>, k_max: usize, restarts: usize, seed: u64) -> Result<ResidualCurve> {
    let n = z.ncols();
    if k_max == 0 || k_max > n {
        return Err(InferenceError::InvalidK { k: k_max, n });
    }
    let raw = (1..=k_max)
        .map(|k| kmeans(z, k, restarts, rng::derive(seed, k as u64)).map(|c| c.residual))
        .collect::<Result<Vec<_>>>()?;
    let mut r = raw.clone();
    for k in 1..r.len() {
        r[k] = r[k].min(r[k - 1]);
    }
    Ok(ResidualCurve { r, raw, restarts })
}

/// Elbow of the residual curve: argmax over K ∈ 2..K_max−1 of the second
/// difference of r(K)/r(1). A flat curve gives 1; ties give the smallest K.
pub fn select_k_sod(curve: &ResidualCurve) -> Result<usize> {
    let k_max = curve.k_max();
    if k_max < 3 {
        return Err(InferenceError::KMaxTooSmall(k_max));
    }
    let r1 = curve.r[0];
    if r1 <= FLAT_RESIDUAL {
        return Ok(1);
    }
    let r: Vec<f64> = curve.r.iter().map(|v| v / r1).collect();
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..k_max {
        // r is 0-indexed: r[k-1] is r(K).
        let sod = r[k - 2] + r[k] - 2.0 * r[k - 1];
        if sod > best.1 {
            best = (k, sod);
        }
    }
    Ok(best.0)
}

fn distance_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(&points[i], &points[j]).sqrt();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn mean_silhouette_with(dist: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let n = assignments.len();
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            sums[assignments[j]] += dist[i][j];
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 && b.is_finite() {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Mean silhouette coefficient; points in singleton clusters score 0.
pub fn mean_silhouette(z: ArrayView2<f64>, assignments: &[usize]) -> f64 {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    mean_silhouette_with(&distance_matrix(&columns(z)), assignments, k)
}

/// K ∈ 2..=K_max (capped at N−1) maximizing the mean silhouette of the
/// K-means partition; ties give the smallest K.
pub fn select_k_silhouette(z: ArrayView2<f64>, k_max: usize, restarts: usize, seed: u64) -> Result<usize> {
    let n = z.ncols();
    if n < 3 {
        return Err(InferenceError::TooFewPoints { needed: 3, got: n });
    }
    if k_max < 2 {
        return Err(InferenceError::KMaxTooSmall(k_max));
    }
    let dist = distance_matrix(&columns(z));
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..=k_max.min(n - 1) {
        let c = kmeans(z, k, restarts, rng::derive(seed, k as u64))?;
        let s = mean_silhouette_with(&dist, &c.assignments, k);
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

/// Picks K with `method` over candidates 1..=k_max (capped at N).
pub fn select_k(z: ArrayView2<f64>, method: SelectMethod, k_max: usize, restarts: usize, seed: u64) -> Result<usize> {
    let k_max = k_max.min(z.ncols());
    match method {
        SelectMethod::Sod => select_k_sod(&residual_curve(z, k_max, restarts, seed)?),
        SelectMethod::Silh => select_k_silhouette(z, k_max, restarts, seed),
    }
}

/// Centroids as a K_e×K matrix.
pub fn centroid_matrix(result: &ClusterResult) -> Array2<f64> {
    let d = result.centroids.first().map_or(0, Vec::len);
    Array2::from_shape_fn((d, result.k()), |(r, c)| result.centroids[c][r])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(centers: &[[f64; 2]], per: usize, sigma: f64, seed: u64) -> Array2<f64> {
        let mut r = rng::rng(seed);
        let n = centers.len() * per;
        Array2::from_shape_fn((2, n), |(d, j)| centers[j / per][d] + sigma * r.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn distinct_locations_give_zero_residual() {
        let z = array![[0.0, 0.0, 1.0, 1.0, 5.0], [0.0, 0.0, 1.0, 1.0, 5.0]];
        let c = kmeans(z.view(), 3, 5, 0).unwrap();
        assert_eq!(c.residual, 0.0);
        assert!(c.cluster_sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn one_cluster_is_the_mean() {
        let z = array![[0.0, 2.0, 4.0], [1.0, 1.0, 4.0]];
        let c = kmeans(z.view(), 1, 3, 0).unwrap();
        assert_eq!(c.centroids[0], vec![2.0, 2.0]);
        assert!((c.residual - (4.0 + 1.0 + 0.0 + 1.0 + 4.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn invalid_k_is_an_error() {
        let z = array![[0.0, 1.0], [0.0, 1.0]];
        assert!(matches!(kmeans(z.view(), 3, 1, 0), Err(InferenceError::InvalidK { .. })));
        assert!(kmeans(z.view(), 0, 1, 0).is_err());
        assert!(kmeans(z.view(), 1, 0, 0).is_err());
    }

    #[test]
    fn result_is_a_lloyd_fixpoint() {
        let z = blobs(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 20, 0.3, 4);
        let c = kmeans(z.view(), 3, 10, 1).unwrap();
        let pts = columns(z.view());
        let (mu, _) = means(&pts, &c.assignments, 3);
        assert_eq!(mu, c.centroids);
        for (p, &a) in pts.iter().zip(&c.assignments) {
            let d_own = sq_dist(p, &c.centroids[a]);
            assert!(c.centroids.iter().all(|m| sq_dist(p, m) >= d_own));
        }
        assert!((partition_residual(z.view(), &c.assignments, 3) - c.residual).abs() <= 1e-12);
    }

    #[test]
    fn identical_points_still_fill_every_cluster() {
        let z = Array2::from_elem((2, 6), 0.5);
        let c = kmeans(z.view(), 3, 2, 0).unwrap();
        assert!(c.cluster_sizes().iter().all(|&s| s > 0));
        assert_eq!(c.residual, 0.0);
    }

    #[test]
    fn more_restarts_never_hurt() {
        let z = blobs(&[[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [0.5, 0.5]], 10, 0.2, 9);
        let mut prev = f64::INFINITY;
        for restarts in [1, 2, 5, 10, 20] {
            let r = kmeans(z.view(), 4, restarts, 3).unwrap().residual;
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let z = blobs(&[[0.0, 0.0], [1.0, 1.0]], 15, 0.4, 2);
        assert_eq!(kmeans(z.view(), 2, 4, 7).unwrap(), kmeans(z.view(), 2, 4, 7).unwrap());
    }

    #[test]
    fn curve_is_monotone_and_reaches_zero() {
        let z = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 4, 0.5, 1);
        let curve = residual_curve(z.view(), 12, 5, 0).unwrap();
        assert!(curve.r.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(curve.at(12), 0.0);
        assert!(curve.to_csv().starts_with("k,r,raw\n1,"));
    }

    #[test]
    fn separated_blobs_have_an_elbow_at_three() {
        let sigma = 0.05;
        let z = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 30, sigma, 5);
        let curve = residual_curve(z.view(), 6, 10, 0).unwrap();
        // Expected within-cluster scatter: N·d·σ² (minus the fitted means).
        let expected = 90.0 * 2.0 * sigma * sigma;
        assert!(curve.at(3) < 2.0 * expected && curve.at(3) > 0.5 * expected);
        assert!(curve.at(2) > 100.0 * curve.at(3));
        assert_eq!(select_k_sod(&curve).unwrap(), 3);
    }

    #[test]
    fn sod_hand_example() {
        let curve = ResidualCurve {
            r: vec![10.0, 2.0, 1.5, 1.2, 1.0],
            raw: vec![10.0, 2.0, 1.5, 1.2, 1.0],
            restarts: 1,
        };
        assert_eq!(select_k_sod(&curve).unwrap(), 2);
        let flat = ResidualCurve {
            r: vec![0.0; 4],
            raw: vec![0.0; 4],
            restarts: 1,
        };
        assert_eq!(select_k_sod(&flat).unwrap(), 1);
        let short = ResidualCurve {
            r: vec![1.0, 0.5],
            raw: vec![1.0, 0.5],
            restarts: 1,
        };
        assert!(select_k_sod(&short).is_err());
    }

    #[test]
    fn single_point_mass_selects_one() {
        let z = Array2::from_elem((3, 20), 0.25);
        assert_eq!(select_k(z.view(), SelectMethod::Sod, 10, 3, 0).unwrap(), 1);
    }

    #[test]
    fn silhouette_finds_two_blobs() {
        for seed in 0..5 {
            let z = blobs(&[[0.0, 0.0], [2.0, 2.0]], 25, 0.1, seed);
            assert_eq!(select_k_silhouette(z.view(), 10, 5, seed).unwrap(), 2);
        }
    }

    #[test]
    fn silhouette_bounds_and_duplicates() {
        let z = array![[0.0, 0.0, 1.0, 1.0, 4.0, 4.0], [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        assert_eq!(mean_silhouette(z.view(), &[0, 0, 1, 1, 2, 2]), 1.0);
        let r = blobs(&[[0.0, 0.0]], 30, 1.0, 3);
        for k in 2..6 {
            let c = kmeans(r.view(), k, 3, 0).unwrap();
            let s = mean_silhouette(r.view(), &c.assignments);
            assert!((-1.0..=1.0).contains(&s));
        }
        // Singletons score 0.
        assert_eq!(mean_silhouette(z.view(), &[0, 1, 2, 3, 4, 5]), 0.0);
        assert!(select_k_silhouette(array![[0.0, 1.0], [0.0, 1.0]].view(), 5, 1, 0).is_err());
    }

    #[test]
    fn silhouette_against_direct_definition() {
        let z = blobs(&[[0.0, 0.0], [1.0, 0.5]], 6, 0.4, 8);
        let labels: Vec<usize> = (0..12).map(|i| (i * 5 % 7) % 3).collect();
        let pts = columns(z.view());
        let mut total = 0.0;
        for i in 0..12 {
            let mean_to = |c: usize| {
                let others: Vec<f64> = (0..12)
                    .filter(|&j| j != i && labels[j] == c)
                    .map(|j| sq_dist(&pts[i], &pts[j]).sqrt())
                    .collect();
                others.iter().sum::<f64>() / others.len() as f64
            };
            let a = mean_to(labels[i]);
            let b = (0..3).filter(|&c| c != labels[i]).map(|c| {
                let m: Vec<f64> = (0..12).filter(|&j| labels[j] == c).map(|j| sq_dist(&pts[i], &pts[j]).sqrt()).collect();
                m.iter().sum::<f64>() / m.len() as f64
            }).fold(f64::INFINITY, f64::min);
            total += (b - a) / a.max(b);
        }
        assert!((mean_silhouette(z.view(), &labels) - total / 12.0).abs() < 1e-12);
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("sod".parse::<SelectMethod>().unwrap(), SelectMethod::Sod);
        assert_eq!("silh".parse::<SelectMethod>().unwrap(), SelectMethod::Silh);
        assert!("gap".parse::<SelectMethod>().is_err());
    }
}
