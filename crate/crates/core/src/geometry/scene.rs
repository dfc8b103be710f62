//! Synthetic scenes of noisy planar structures.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Curve, GeometryError, Point, Result, StructureKind};
use crate::dataio::Instance;
use crate::rng::{self, Rng};

pub const DEFAULT_POINTS_PER_STRUCTURE: usize = 100;
pub const LCE_NOISE_SIGMA: f64 = 0.05;
/// Resamples allowed per structure before generation gives up.
pub const RETRY_BUDGET: usize = 100;

const RADIUS_RANGE: (f64, f64) = (0.2, 0.8);
const MIN_AXIS_RATIO: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    pub min: Point,
    pub max: Point,
}

impl Default for DomainBox {
    fn default() -> Self {
        DomainBox {
            min: [-1.0, -1.0],
            max: [1.0, 1.0],
        }
    }
}

impl DomainBox {
    fn contains_box(&self, lo: Point, hi: Point) -> bool {
        lo[0] >= self.min[0] && lo[1] >= self.min[1] && hi[0] <= self.max[0] && hi[1] <= self.max[1]
    }

    fn sample(&self, rng: &mut Rng) -> Point {
        [
            rng.gen_range(self.min[0]..=self.max[0]),
            rng.gen_range(self.min[1]..=self.max[1]),
        ]
    }

    /// Clips the infinite line through `p` with direction `d` to the box
    /// (Liang–Barsky); returns the chord endpoints.
    fn clip_line(&self, p: Point, d: [f64; 2]) -> Option<(Point, Point)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for axis in 0..2 {
            if d[axis].abs() < 1e-15 {
                if p[axis] < self.min[axis] || p[axis] > self.max[axis] {
                    return None;
                }
                continue;
            }
            let a = (self.min[axis] - p[axis]) / d[axis];
            let b = (self.max[axis] - p[axis]) / d[axis];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t1 > t0).then(|| {
            (
                [p[0] + t0 * d[0], p[1] + t0 * d[1]],
                [p[0] + t1 * d[0], p[1] + t1 * d[1]],
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub kind: StructureKind,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    DEFAULT_POINTS_PER_STRUCTURE
}

fn default_sigma() -> f64 {
    LCE_NOISE_SIGMA
}

/// Scene description; also the JSON schema of generator spec files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub structures: Vec<StructureSpec>,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub outliers: usize,
    #[serde(default)]
    pub domain_box: DomainBox,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    /// One line, two ellipses and one circle.
    pub fn lce(points_per_structure: usize, noise_sigma: f64, seed: u64) -> Self {
        let s = |kind| StructureSpec {
            kind,
            points: points_per_structure,
        };
        SceneSpec {
            structures: vec![
                s(StructureKind::Line),
                s(StructureKind::Ellipse),
                s(StructureKind::Ellipse),
                s(StructureKind::Circle),
            ],
            noise_sigma,
            outliers: 0,
            domain_box: DomainBox::default(),
            seed,
        }
    }

    pub fn multimodel(
        kind: StructureKind,
        models: usize,
        points_per_structure: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        SceneSpec {
            structures: vec![
                StructureSpec {
                    kind,
                    points: points_per_structure,
                };
                models
            ],
            noise_sigma,
            outliers: 0,
            domain_box: DomainBox::default(),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SceneSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.structures.is_empty() {
            return Err(GeometryError::InvalidSpec("no structures".into()));
        }
        for (i, s) in self.structures.iter().enumerate() {
            if s.kind == StructureKind::Conic {
                return Err(GeometryError::InvalidSpec(format!(
                    "structure {i}: general conics cannot be generated"
                )));
            }
            if s.points < s.kind.minimal_support() {
                return Err(GeometryError::InvalidSpec(format!(
                    "structure {i}: a {} needs at least {} points, got {}",
                    s.kind,
                    s.kind.minimal_support(),
                    s.points
                )));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(GeometryError::InvalidSpec(format!(
                "noise_sigma must be a nonnegative number, got {}",
                self.noise_sigma
            )));
        }
        let b = &self.domain_box;
        if !(b.max[0] > b.min[0] && b.max[1] > b.min[1]) {
            return Err(GeometryError::InvalidSpec("empty domain box".into()));
        }
        Ok(())
    }

    pub fn kinds(&self) -> Vec<StructureKind> {
        self.structures.iter().map(|s| s.kind).collect()
    }
}

/// A generated scene: the instance plus the generating curves, in label order.
#[derive(Debug, Clone)]
pub struct Scene {
    pub instance: Instance,
    pub curves: Vec<Curve>,
}

enum Sampler {
    Segment(Point, Point),
    Angular,
}

fn sample_structure(kind: StructureKind, domain: &DomainBox, rng: &mut Rng) -> Result<(Curve, Sampler)> {
    for _ in 0..RETRY_BUDGET {
        match kind {
            StructureKind::Line => {
                let p = domain.sample(rng);
                let q = domain.sample(rng);
                let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
                let len = dx.hypot(dy);
                if len < 1e-6 {
                    continue;
                }
                let direction = [dx / len, dy / len];
                if let Some((a, b)) = domain.clip_line(p, direction) {
                    return Ok((Curve::Line { point: p, direction }, Sampler::Segment(a, b)));
                }
            }
            StructureKind::Circle => {
                let center = domain.sample(rng);
                let radius = rng.gen_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
                let lo = [center[0] - radius, center[1] - radius];
                let hi = [center[0] + radius, center[1] + radius];
                if domain.contains_box(lo, hi) {
                    return Ok((Curve::Circle { center, radius }, Sampler::Angular));
                }
            }
            StructureKind::Ellipse => {
                let center = domain.sample(rng);
                let r1 = rng.gen_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
                let r2 = rng.gen_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
                let angle = rng.gen_range(0.0..PI);
                let (a, b) = (r1.max(r2), r1.min(r2));
                if a / b < MIN_AXIS_RATIO {
                    continue;
                }
                // Half extents of the rotated ellipse's bounding box.
                let (s, c) = angle.sin_cos();
                let hx = ((a * c).powi(2) + (b * s).powi(2)).sqrt();
                let hy = ((a * s).powi(2) + (b * c).powi(2)).sqrt();
                let lo = [center[0] - hx, center[1] - hy];
                let hi = [center[0] + hx, center[1] + hy];
                if domain.contains_box(lo, hi) {
                    let curve = Curve::Ellipse {
                        center,
                        semi_major: a,
                        semi_minor: b,
                        angle,
                    };
                    return Ok((curve, Sampler::Angular));
                }
            }
            StructureKind::Conic => {
                return Err(GeometryError::InvalidSpec("general conics cannot be generated".into()))
            }
        }
    }
    Err(GeometryError::Generation(format!(
        "could not place a {kind} inside the domain box after {RETRY_BUDGET} attempts"
    )))
}

/// Generates a scene: each structure in order, then background outliers
/// (labelled after the last structure), then a seeded shuffle of the points.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = rng::rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| GeometryError::InvalidSpec(e.to_string()))?;

    let mut points: Vec<(Point, i64)> = Vec::new();
    let mut curves = Vec::with_capacity(spec.structures.len());
    for (label, s) in spec.structures.iter().enumerate() {
        let (curve, sampler) = sample_structure(s.kind, &spec.domain_box, &mut rng)?;
        for _ in 0..s.points {
            let p = match sampler {
                Sampler::Segment(a, b) => {
                    let t: f64 = rng.gen();
                    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
                }
                Sampler::Angular => curve
                    .point_at(rng.gen_range(0.0..TAU))
                    .expect("circles and ellipses are parametrized"),
            };
            let p = if spec.noise_sigma > 0.0 {
                [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]
            } else {
                p
            };
            points.push((p, label as i64));
        }
        curves.push(curve);
    }
    let outlier_label = spec.structures.len() as i64;
    for _ in 0..spec.outliers {
        points.push((spec.domain_box.sample(&mut rng), outlier_label));
    }
    points.shuffle(&mut rng);

    let n = points.len();
    let mut coords = Array2::zeros((2, n));
    for (i, (p, _)) in points.iter().enumerate() {
        coords[[0, i]] = p[0];
        coords[[1, i]] = p[1];
    }
    // Structure ids are used as-is so label k always means structure k, even
    // though reindexing would renumber them by first occurrence after the shuffle.
    let labels: Vec<usize> = points.iter().map(|(_, l)| *l as usize).collect();
    let kinds: Vec<&str> = spec.structures.iter().map(|s| s.kind.as_str()).collect();
    let instance = Instance {
        name: format!("scene-{}", spec.seed),
        points: coords,
        labels,
        meta: Default::default(),
    }
    .with_meta("source", "synthetic")
    .with_meta("structures", kinds.join(","))
    .with_meta("noise_sigma", crate::dataio::format_f64(spec.noise_sigma))
    .with_meta("outliers", spec.outliers.to_string())
    .with_meta("seed", spec.seed.to_string());
    instance
        .validate()
        .map_err(|e| GeometryError::Generation(e.to_string()))?;
    Ok(Scene { instance, curves })
}

/// A lines/circles/ellipses scene: exactly one line, two ellipses and one circle.
pub fn make_lce_instance(spec: &SceneSpec) -> Result<Instance> {
    let mut kinds = spec.kinds();
    kinds.sort_by_key(|k| *k as u8);
    let expected = [
        StructureKind::Line,
        StructureKind::Circle,
        StructureKind::Ellipse,
        StructureKind::Ellipse,
    ];
    if kinds != expected {
        return Err(GeometryError::InvalidSpec(
            "an LCE scene has exactly one line, two ellipses and one circle".into(),
        ));
    }
    let mut inst = generate_scene(spec)?.instance;
    inst.meta.insert("source".into(), "lce".into());
    Ok(inst)
}

/// A single-type scene with 2 to 6 structures of the same kind.
pub fn make_multimodel_instance(spec: &SceneSpec) -> Result<Instance> {
    let kinds = spec.kinds();
    if !(2..=6).contains(&kinds.len()) {
        return Err(GeometryError::InvalidSpec(format!(
            "multi-model scenes have 2 to 6 structures, got {}",
            kinds.len()
        )));
    }
    if kinds.iter().any(|k| *k != kinds[0]) {
        return Err(GeometryError::InvalidSpec(
            "multi-model scenes use a single structure kind".into(),
        ));
    }
    let mut inst = generate_scene(spec)?.instance;
    inst.meta.insert("source".into(), "multimodel".into());
    Ok(inst)
}
