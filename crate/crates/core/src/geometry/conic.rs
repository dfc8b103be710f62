use std::f64::consts::FRAC_PI_2;

use super::{GeometryError, Point, Result};

/// Coefficients (A, B, C, D, E, F) of `Ax² + Bxy + Cy² + Dx + Ey + F = 0`,
/// scaled to unit norm with the first significant coefficient positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic([f64; 6]);

/// Coefficients below this magnitude (after normalization) do not decide the sign.
const SIGN_TOL: f64 = 1e-12;

impl Conic {
    pub fn new(coeffs: [f64; 6]) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidConic("non-finite coefficient".into()));
        }
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GeometryError::InvalidConic("all coefficients are zero".into()));
        }
        let mut c = coeffs.map(|v| v / norm);
        let lead = c.iter().copied().find(|v| v.abs() > SIGN_TOL).unwrap_or(c[0]);
        if lead < 0.0 {
            c = c.map(|v| -v);
        }
        Ok(Conic(c))
    }

    pub fn coeffs(&self) -> [f64; 6] {
        self.0
    }

    /// B² − 4AC: negative for ellipses, zero for parabolas, positive for hyperbolas.
    pub fn discriminant(&self) -> f64 {
        let [a, b, c, ..] = self.0;
        b * b - 4.0 * a * c
    }

    pub fn residual(&self, p: Point) -> f64 {
        algebraic_residual(&self.0, p)
    }

    /// Gradient of the conic polynomial at `p`.
    pub fn gradient(&self, p: Point) -> [f64; 2] {
        let [a, b, c, d, e, _] = self.0;
        let [x, y] = p;
        [2.0 * a * x + b * y + d, b * x + 2.0 * c * y + e]
    }

    /// First-order approximation of the geometric distance.
    pub fn sampson_distance(&self, p: Point) -> f64 {
        let g = self.gradient(p);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let r = self.residual(p).abs();
        if gn > 0.0 {
            r / gn
        } else if r == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Geometric parameters if this conic is a real, non-degenerate ellipse.
    pub fn to_ellipse(&self) -> Option<Curve> {
        let [a, b, c, d, e, f] = self.0;
        let det = 4.0 * a * c - b * b;
        if det <= 0.0 {
            return None;
        }
        let cx = (b * e - 2.0 * c * d) / det;
        let cy = (b * d - 2.0 * a * e) / det;
        // Value of the polynomial at the center.
        let f0 = a * cx * cx + b * cx * cy + c * cy * cy + d * cx + e * cy + f;
        // Eigen-decomposition of [[a, b/2], [b/2, c]].
        let mean = 0.5 * (a + c);
        let half_diff = 0.5 * (a - c);
        let rad = (half_diff * half_diff + 0.25 * b * b).sqrt();
        let (l_minus, l_plus) = (mean - rad, mean + rad);
        if l_minus * l_plus <= 0.0 || f0 * l_minus >= 0.0 {
            return None;
        }
        // Semi-axis along each eigenvector; the eigenvector of l_plus points
        // along 0.5·atan2(b, a − c), the other one is perpendicular to it.
        let along_plus = (-f0 / l_plus).sqrt();
        let along_minus = (-f0 / l_minus).sqrt();
        let phi = if rad == 0.0 { 0.0 } else { 0.5 * b.atan2(a - c) };
        let (major, minor, angle) = if along_minus >= along_plus {
            (along_minus, along_plus, phi + FRAC_PI_2)
        } else {
            (along_plus, along_minus, phi)
        };
        if !(major.is_finite() && minor.is_finite()) || minor <= 0.0 {
            return None;
        }
        Some(Curve::Ellipse {
            center: [cx, cy],
            semi_major: major,
            semi_minor: minor,
            angle: wrap_angle(angle),
        })
    }
}

/// Residual of unnormalized coefficients at `p`.
pub fn algebraic_residual(c: &[f64; 6], p: Point) -> f64 {
    let [x, y] = p;
    c[0] * x * x + c[1] * x * y + c[2] * y * y + c[3] * x + c[4] * y + c[5]
}

pub fn conic_residual(point: Point, conic: &Conic) -> f64 {
    conic.residual(point)
}

fn wrap_angle(mut t: f64) -> f64 {
    use std::f64::consts::PI;
    while t < 0.0 {
        t += PI;
    }
    while t >= PI {
        t -= PI;
    }
    t
}

/// A geometric curve model with an exact point-to-curve distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curve {
    /// Infinite line through `point` with unit `direction`.
    Line { point: Point, direction: [f64; 2] },
    Circle { center: Point, radius: f64 },
    /// `angle` is the direction of the major axis, in [0, π).
    Ellipse {
        center: Point,
        semi_major: f64,
        semi_minor: f64,
        angle: f64,
    },
    General(Conic),
}

/// Width of the final golden-section bracket on the ellipse parameter.
const GOLDEN_TOL: f64 = 1e-10;
const COARSE_SAMPLES: usize = 16;

impl Curve {
    pub fn to_conic(&self) -> Conic {
        let coeffs = match *self {
            Curve::Line { point, direction } => {
                let n = [-direction[1], direction[0]];
                [0.0, 0.0, 0.0, n[0], n[1], -(n[0] * point[0] + n[1] * point[1])]
            }
            Curve::Circle { center: [h, k], radius } => {
                [1.0, 0.0, 1.0, -2.0 * h, -2.0 * k, h * h + k * k - radius * radius]
            }
            Curve::Ellipse {
                center: [h, k],
                semi_major: a,
                semi_minor: b,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (a2, b2) = (a * a, b * b);
                let ca = a2 * s * s + b2 * c * c;
                let cb = 2.0 * (b2 - a2) * s * c;
                let cc = a2 * c * c + b2 * s * s;
                let cd = -2.0 * ca * h - cb * k;
                let ce = -cb * h - 2.0 * cc * k;
                let cf = ca * h * h + cb * h * k + cc * k * k - a2 * b2;
                [ca, cb, cc, cd, ce, cf]
            }
            Curve::General(conic) => return conic,
        };
        Conic::new(coeffs).expect("curve parameters give a nonzero conic")
    }

    /// Euclidean distance from `p` to the nearest point of the curve.
    ///
    /// Ellipses have no closed form; the curve parameter is minimized by a
    /// coarse scan followed by golden-section refinement. General conics that
    /// are not ellipses fall back to the Sampson approximation.
    pub fn distance(&self, p: Point) -> f64 {
        match *self {
            Curve::Line { point, direction } => {
                let n = [-direction[1], direction[0]];
                (n[0] * (p[0] - point[0]) + n[1] * (p[1] - point[1])).abs()
            }
            Curve::Circle { center, radius } => {
                ((p[0] - center[0]).hypot(p[1] - center[1]) - radius).abs()
            }
            Curve::Ellipse {
                center,
                semi_major,
                semi_minor,
                angle,
            } => ellipse_distance(p, center, semi_major, semi_minor, angle),
            Curve::General(conic) => {
                let [a, b, c, ..] = conic.coeffs();
                if a.abs() < SIGN_TOL && b.abs() < SIGN_TOL && c.abs() < SIGN_TOL {
                    return conic.sampson_distance(p);
                }
                match conic.to_ellipse() {
                    Some(e) => e.distance(p),
                    None => conic.sampson_distance(p),
                }
            }
        }
    }

    /// Point on the curve at parameter `t` (angle for circles/ellipses,
    /// signed arc length from `point` for lines).
    pub fn point_at(&self, t: f64) -> Option<Point> {
        match *self {
            Curve::Line { point, direction } => {
                Some([point[0] + t * direction[0], point[1] + t * direction[1]])
            }
            Curve::Circle { center, radius } => {
                Some([center[0] + radius * t.cos(), center[1] + radius * t.sin()])
            }
            Curve::Ellipse {
                center,
                semi_major,
                semi_minor,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (u, v) = (semi_major * t.cos(), semi_minor * t.sin());
                Some([center[0] + c * u - s * v, center[1] + s * u + c * v])
            }
            Curve::General(_) => None,
        }
    }
}

fn ellipse_distance(p: Point, center: Point, a: f64, b: f64, angle: f64) -> f64 {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
    // Local frame, reflected into the first quadrant; the nearest point shares
    // the quadrant of the query point.
    let qx = (c * dx + s * dy).abs();
    let qy = (-s * dx + c * dy).abs();
    let f = |t: f64| {
        let ex = a * t.cos() - qx;
        let ey = b * t.sin() - qy;
        ex * ex + ey * ey
    };

    let step = FRAC_PI_2 / COARSE_SAMPLES as f64;
    let (best, _) = (0..=COARSE_SAMPLES)
        .map(|i| (i, f(i as f64 * step)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let mut lo = (best as f64 - 1.0).max(0.0) * step;
    let mut hi = (best as f64 + 1.0).min(COARSE_SAMPLES as f64) * step;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let t = 0.5 * (lo + hi);
    [f(t), f(0.0), f(FRAC_PI_2)]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}
