//! Greedy sequential multi-model fitting: one RANSAC per scheduled model,
//! removing each model's inliers before fitting the next.

use rand::seq::index;

use super::{
    fit_circle_algebraic, fit_conic_general, fit_ellipse_direct, fit_line_tls, Curve,
    GeometryError, Point, Result, StructureKind,
};
use crate::dataio::Instance;
use crate::rng;

/// A model recovered by [`sequential_fit`].
#[derive(Debug, Clone)]
pub struct SequentialModel {
    pub kind: StructureKind,
    pub curve: Curve,
    pub inliers: usize,
}

fn fit_kind(kind: StructureKind, points: &[Point]) -> Result<Curve> {
    match kind {
        StructureKind::Line => fit_line_tls(points),
        StructureKind::Circle => fit_circle_algebraic(points),
        StructureKind::Ellipse => {
            let conic = fit_ellipse_direct(points)?;
            conic
                .to_ellipse()
                .ok_or_else(|| GeometryError::Fit("direct fit is not a real ellipse".into()))
        }
        StructureKind::Conic => fit_conic_general(points).map(Curve::General),
    }
}

/// Fits the scheduled models one after another and labels every point.
///
/// Label `m` refers to the m-th fitted model in schedule order. A scheduled
/// model is skipped when too few points remain for its minimal sample or
/// every sample is degenerate. Points that are no model's inlier are given
/// the label of the geometrically nearest model.
pub fn sequential_fit(
    instance: &Instance,
    schedule: &[(StructureKind, usize)],
    inlier_threshold: f64,
    ransac_iters: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<SequentialModel>)> {
    if instance.dim() != 2 {
        return Err(GeometryError::Fit(format!(
            "sequential fitting needs planar points, got dimension {}",
            instance.dim()
        )));
    }
    if ransac_iters == 0 {
        return Err(GeometryError::Fit("ransac_iters must be positive".into()));
    }
    if !(inlier_threshold > 0.0) {
        return Err(GeometryError::Fit("inlier threshold must be positive".into()));
    }
    let total: usize = schedule.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Err(GeometryError::Fit("empty schedule".into()));
    }

    let points: Vec<Point> = instance
        .points
        .columns()
        .into_iter()
        .map(|c| [c[0], c[1]])
        .collect();
    let n = points.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut models = Vec::with_capacity(total);
    let mut rng = rng::rng(seed);

    let kinds = schedule
        .iter()
        .flat_map(|&(kind, count)| std::iter::repeat(kind).take(count));
    for (model_id, kind) in kinds.enumerate() {
        let support = kind.minimal_support();
        if remaining.len() < support {
            // Earlier models absorbed the points this one would need.
            log::debug!("model {model_id} ({kind}): {} points left, need {support}; skipped", remaining.len());
            continue;
        }

        let mut best: Option<(usize, Curve)> = None;
        for _ in 0..ransac_iters {
            let sample: Vec<Point> = index::sample(&mut rng, remaining.len(), support)
                .into_iter()
                .map(|i| points[remaining[i]])
                .collect();
            let Ok(curve) = fit_kind(kind, &sample) else {
                continue;
            };
            let count = remaining
                .iter()
                .filter(|&&i| curve.distance(points[i]) < inlier_threshold)
                .count();
            if best.as_ref().map_or(true, |(c, _)| count > *c) {
                best = Some((count, curve));
            }
        }
        let Some((_, hypothesis)) = best else {
            log::debug!("model {model_id} ({kind}): every minimal sample was degenerate; skipped");
            continue;
        };

        // Least-squares refinement on the consensus set; keep the hypothesis
        // if refinement fails or loses support.
        let consensus: Vec<Point> = remaining
            .iter()
            .map(|&i| points[i])
            .filter(|p| hypothesis.distance(*p) < inlier_threshold)
            .collect();
        let count_for = |curve: &Curve| {
            remaining
                .iter()
                .filter(|&&i| curve.distance(points[i]) < inlier_threshold)
                .count()
        };
        let curve = match fit_kind(kind, &consensus) {
            Ok(refined) if count_for(&refined) >= count_for(&hypothesis) => refined,
            _ => hypothesis,
        };

        let mut inliers = 0;
        remaining.retain(|&i| {
            if curve.distance(points[i]) < inlier_threshold {
                labels[i] = Some(models.len());
                inliers += 1;
                false
            } else {
                true
            }
        });
        models.push(SequentialModel { kind, curve, inliers });
    }

    if models.is_empty() {
        return Err(GeometryError::Fit(format!(
            "no scheduled model could be fitted to {n} points"
        )));
    }
    let labels = labels
        .into_iter()
        .zip(&points)
        .map(|(label, p)| {
            label.unwrap_or_else(|| {
                models
                    .iter()
                    .enumerate()
                    .map(|(m, model)| (m, model.curve.distance(*p)))
                    .fold((0, f64::INFINITY), |acc, (m, d)| if d < acc.1 { (m, d) } else { acc })
                    .0
            })
        })
        .collect();
    Ok((labels, models))
}
