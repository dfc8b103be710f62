//! Least-squares fitters for lines, circles, ellipses and general conics.
//!
//! All fitters work in normalized coordinates (centroid at the origin, RMS
//! distance √2) and map the result back, which keeps the scatter matrices
//! well conditioned for data far from the origin.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};

use super::{Conic, Curve, GeometryError, Point, Result};

struct Normalization {
    mx: f64,
    my: f64,
    scale: f64,
}

impl Normalization {
    fn of(points: &[Point]) -> Result<Self> {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
        let ms = points
            .iter()
            .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
            .sum::<f64>()
            / n;
        let extent = 1.0 + mx.abs().max(my.abs());
        if !(ms.sqrt() > 1e-12 * extent) {
            return Err(GeometryError::Fit("points are coincident".into()));
        }
        Ok(Normalization {
            mx,
            my,
            scale: (2.0 / ms).sqrt(),
        })
    }

    fn apply(&self, p: Point) -> Point {
        [(p[0] - self.mx) * self.scale, (p[1] - self.my) * self.scale]
    }

    /// Maps coefficients fitted in normalized coordinates back to the input frame.
    fn conic_to_input(&self, c: [f64; 6]) -> [f64; 6] {
        let [a, b, cc, d, e, f] = c;
        let (s, mx, my) = (self.scale, self.mx, self.my);
        let s2 = s * s;
        [
            a * s2,
            b * s2,
            cc * s2,
            -2.0 * a * s2 * mx - b * s2 * my + d * s,
            -b * s2 * mx - 2.0 * cc * s2 * my + e * s,
            a * s2 * mx * mx + b * s2 * mx * my + cc * s2 * my * my - d * s * mx - e * s * my + f,
        ]
    }
}

fn require(points: &[Point], needed: usize) -> Result<()> {
    if points.len() < needed {
        return Err(GeometryError::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(GeometryError::Fit("non-finite point".into()));
    }
    Ok(())
}

/// Total-least-squares line: the principal direction through the centroid.
pub fn fit_line_tls(points: &[Point]) -> Result<Curve> {
    require(points, 2)?;
    let norm = Normalization::of(points)?;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let [x, y] = norm.apply(*p);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Ok(Curve::Line {
        point: [norm.mx, norm.my],
        direction: [theta.cos(), theta.sin()],
    })
}

/// Algebraic (Kåsa) circle fit: least squares on `x² + y² + Dx + Ey + F = 0`.
pub fn fit_circle_algebraic(points: &[Point]) -> Result<Curve> {
    require(points, 3)?;
    let norm = Normalization::of(points)?;
    let n = points.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut rhs = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let [x, y] = norm.apply(*p);
        a[(i, 0)] = x;
        a[(i, 1)] = y;
        a[(i, 2)] = 1.0;
        rhs[i] = -(x * x + y * y);
    }
    let svd = a.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if smin <= 1e-10 * smax {
        return Err(GeometryError::Fit("circle fit is rank deficient (collinear points)".into()));
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|e| GeometryError::Fit(format!("circle solve failed: {e}")))?;
    let (d, e, f) = (sol[0], sol[1], sol[2]);
    let (cx, cy) = (-d / 2.0, -e / 2.0);
    let r2 = cx * cx + cy * cy - f;
    if !(r2 > 0.0) {
        return Err(GeometryError::Fit("circle fit produced an imaginary radius".into()));
    }
    Ok(Curve::Circle {
        center: [cx / norm.scale + norm.mx, cy / norm.scale + norm.my],
        radius: r2.sqrt() / norm.scale,
    })
}

/// Ellipse-specific direct least-squares fit under the constraint 4AC − B² = 1,
/// solved with the block decomposition of the scatter matrix (Halíř–Flusser),
/// which stays well posed for noise-free data.
pub fn fit_ellipse_direct(points: &[Point]) -> Result<Conic> {
    require(points, 5)?;
    let norm = Normalization::of(points)?;
    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in points {
        let [x, y] = norm.apply(*p);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| GeometryError::Fit("degenerate point configuration".into()))?;
    let (smin, smax) = s3
        .symmetric_eigenvalues()
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if smin <= 1e-12 * smax {
        return Err(GeometryError::Fit("degenerate point configuration (collinear)".into()));
    }
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]].
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint > 0.0 {
            let v = v / constraint.sqrt();
            // Among admissible eigenvectors, keep the smallest algebraic error.
            let cost = (v.transpose() * m * v)[(0, 0)];
            if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                best = Some((cost, v));
            }
        }
    }
    let (_, a1) = best.ok_or_else(|| GeometryError::Fit("no elliptic solution".into()))?;
    let a2 = t * a1;
    let coeffs = norm.conic_to_input([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]]);
    let conic = Conic::new(coeffs)?;
    if !(conic.discriminant() < 0.0) {
        return Err(GeometryError::Fit("fitted conic is not an ellipse".into()));
    }
    Ok(conic)
}

/// Unconstrained conic fit: the right null vector of the design matrix under
/// a unit-norm constraint.
pub fn fit_conic_general(points: &[Point]) -> Result<Conic> {
    require(points, 5)?;
    let norm = Normalization::of(points)?;
    let mut scatter = Matrix6::zeros();
    for p in points {
        let [x, y] = norm.apply(*p);
        let row = nalgebra::Vector6::new(x * x, x * y, y * y, x, y, 1.0);
        scatter += row * row.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    let v = eig.eigenvectors.column(idx);
    Conic::new(norm.conic_to_input([v[0], v[1], v[2], v[3], v[4], v[5]]))
}

/// Null vector of a (numerically) rank-2 3×3 matrix from the best-conditioned
/// cross product of its rows.
fn null_vector(a: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [
        a.row(0).transpose(),
        a.row(1).transpose(),
        a.row(2).transpose(),
    ];
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let best = candidates
        .into_iter()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))?;
    let n = best.norm();
    (n > 0.0 && n.is_finite()).then(|| best / n)
}
