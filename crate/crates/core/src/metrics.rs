//! Clustering quality: permutation-optimal error rate, normalized mutual
//! information, and precision/recall/F-measure under the same matching.

use std::collections::BTreeMap;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty labeling")]
    Empty,
    #[error("prediction has {pred} labels, ground truth has {gt}")]
    LengthMismatch { pred: usize, gt: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Counts of (predicted cluster, ground-truth class) co-occurrences. Rows and
/// columns follow the sorted distinct label values of each side.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(pred: &[usize], gt: &[usize]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(MetricsError::LengthMismatch {
                pred: pred.len(),
                gt: gt.len(),
            });
        }
        if pred.is_empty() {
            return Err(MetricsError::Empty);
        }
        let index = |labels: &[usize]| {
            let ids: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
            ids.keys().enumerate().map(|(i, &l)| (l, i)).collect::<BTreeMap<_, _>>()
        };
        let (pi, gi) = (index(pred), index(gt));
        let mut counts = vec![vec![0; gi.len()]; pi.len()];
        for (p, g) in pred.iter().zip(gt) {
            counts[pi[p]][gi[g]] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn pred_sizes(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn gt_sizes(&self) -> Vec<usize> {
        let k = self.counts.first().map_or(0, Vec::len);
        (0..k).map(|g| self.counts.iter().map(|r| r[g]).sum()).collect()
    }

    /// Maximum-overlap one-to-one matching as (pred row, gt column, count).
    /// Surplus clusters on either side stay unmatched.
    pub fn matching(&self) -> Vec<(usize, usize, usize)> {
        let rows = self.counts.len();
        let cols = self.counts.first().map_or(0, Vec::len);
        // The solver needs rows ≤ columns, so transpose when necessary.
        let transpose = rows > cols;
        let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
        let weights = Matrix::from_fn(r, c, |(i, j)| {
            let (p, g) = if transpose { (j, i) } else { (i, j) };
            self.counts[p][g] as i64
        });
        let (_, assignment) = kuhn_munkres(&weights);
        assignment
            .into_iter()
            .enumerate()
            .map(|(i, j)| {
                let (p, g) = if transpose { (j, i) } else { (i, j) };
                (p, g, self.counts[p][g])
            })
            .collect()
    }

    pub fn matched(&self) -> usize {
        self.matching().iter().map(|m| m.2).sum()
    }
}

/// 1 − (best one-to-one matched count) / N.
pub fn error_rate(pred: &[usize], gt: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::new(pred, gt)?;
    Ok(1.0 - cm.matched() as f64 / cm.total() as f64)
}

fn entropy(sizes: &[usize], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// I(pred; gt) / sqrt(H(pred) H(gt)), natural logarithms.
pub fn nmi(pred: &[usize], gt: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::new(pred, gt)?;
    let n = cm.total() as f64;
    let (ps, gs) = (cm.pred_sizes(), cm.gt_sizes());
    let (hp, hg) = (entropy(&ps, n), entropy(&gs, n));
    if hp == 0.0 || hg == 0.0 {
        // Single cluster on at least one side: identical only if both are.
        return Ok(if hp == 0.0 && hg == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (p, row) in cm.counts.iter().enumerate() {
        for (g, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (ps[p] as f64 * gs[g] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * hg).sqrt()).clamp(0.0, 1.0))
}

/// Precision, recall and F-measure under the error-rate matching.
///
/// Precision averages matched/|cluster| over matched clusters; recall
/// averages matched/|class| over all ground-truth classes (unmatched classes
/// count 0).
pub fn prf(pred: &[usize], gt: &[usize]) -> Result<(f64, f64, f64)> {
    let cm = ConfusionMatrix::new(pred, gt)?;
    let (ps, gs) = (cm.pred_sizes(), cm.gt_sizes());
    let matching = cm.matching();
    let precision = matching.iter().map(|&(p, _, c)| c as f64 / ps[p] as f64).sum::<f64>() / matching.len() as f64;
    let recall = matching.iter().map(|&(_, g, c)| c as f64 / gs[g] as f64).sum::<f64>() / gs.len() as f64;
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub error_rate: f64,
    pub nmi: f64,
    pub precision: f64,
    pub recall: f64,
    pub fmeasure: f64,
}

pub fn evaluate(pred: &[usize], gt: &[usize]) -> Result<MetricReport> {
    let (precision, recall, fmeasure) = prf(pred, gt)?;
    Ok(MetricReport {
        error_rate: error_rate(pred, gt)?,
        nmi: nmi(pred, gt)?,
        precision,
        recall,
        fmeasure,
    })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Mean and median of every metric over a set of instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: MetricReport,
    pub median: MetricReport,
}

pub fn summarize(reports: &[MetricReport]) -> MetricSummary {
    let column = |f: fn(&MetricReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fields: [fn(&MetricReport) -> f64; 5] = [
        |r| r.error_rate,
        |r| r.nmi,
        |r| r.precision,
        |r| r.recall,
        |r| r.fmeasure,
    ];
    let means: Vec<f64> = fields.iter().map(|f| mean(&column(*f))).collect();
    let medians: Vec<f64> = fields.iter().map(|f| median(&mut column(*f))).collect();
    let build = |v: &[f64]| MetricReport {
        error_rate: v[0],
        nmi: v[1],
        precision: v[2],
        recall: v[3],
        fmeasure: v[4],
    };
    MetricSummary {
        count: reports.len(),
        mean: build(&means),
        median: build(&medians),
    }
}

/// Per-instance table followed by `mean` and `median` rows.
pub fn to_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("instance,error_rate,nmi,precision,recall,fmeasure\n");
    let line = |name: &str, r: &MetricReport| {
        format!(
            "{name},{},{},{},{},{}\n",
            r.error_rate, r.nmi, r.precision, r.recall, r.fmeasure
        )
    };
    for (name, r) in rows {
        out.push_str(&line(name, r));
    }
    if !rows.is_empty() {
        let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| *r).collect();
        let s = summarize(&reports);
        out.push_str(&line("mean", &s.mean));
        out.push_str(&line("median", &s.median));
    }
    out
}
