//! Direct least-squares ellipse fit (Fitzgibbon, Pilu & Fisher) in the
//! numerically stable partitioned form of Halíř & Flusser.
//!
//! Points are centered and scaled to mean radius √2 before building the
//! scatter matrices; the fitted ellipse is mapped back afterwards.

use nalgebra::{Matrix2, Matrix3, Vector3};

use super::{wrap_degrees, EllipseParams, CIRCLE_EPS};
use crate::error::FitError;

/// General conic `A x² + B xy + C y² + D x + E y + F = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic(pub [f64; 6]);

impl Conic {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let [a, b, c, d, e, f] = self.0;
        a * x * x + b * x * y + c * y * y + d * x + e * y + f
    }

    /// `B² − 4AC < 0`.
    pub fn is_ellipse(&self) -> bool {
        let [a, b, c, ..] = self.0;
        b * b - 4.0 * a * c < 0.0
    }
}

struct Normalization {
    mx: f64,
    my: f64,
    scale: f64,
}

impl Normalization {
    fn new(points: &[[f64; 2]]) -> Result<Self, FitError> {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
        let mean_r = points.iter().map(|p| (p[0] - mx).hypot(p[1] - my)).sum::<f64>() / n;
        if !(mean_r > 0.0) || !mean_r.is_finite() {
            return Err(FitError::Degenerate);
        }
        Ok(Self {
            mx,
            my,
            scale: std::f64::consts::SQRT_2 / mean_r,
        })
    }

    #[inline]
    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.mx) * self.scale, (p[1] - self.my) * self.scale]
    }

    fn denormalize(&self, c: &Conic) -> Conic {
        let [a, b, cc, d, e, f] = c.0;
        let (s, mx, my) = (self.scale, self.mx, self.my);
        let s2 = s * s;
        Conic([
            a * s2,
            b * s2,
            cc * s2,
            -2.0 * a * s2 * mx - b * s2 * my + d * s,
            -b * s2 * mx - 2.0 * cc * s2 * my + e * s,
            a * s2 * mx * mx + b * s2 * mx * my + cc * s2 * my * my - d * s * mx - e * s * my + f,
        ])
    }
}

/// Conic fit in normalized coordinates.
fn fit_normalized(points: &[[f64; 2]], norm: &Normalization) -> Result<Conic, FitError> {
    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    let mut spread = Matrix2::zeros();
    for &p in points {
        let [x, y] = norm.apply(p);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
        spread += nalgebra::Vector2::new(x, y) * nalgebra::Vector2::new(x, y).transpose();
    }
    // Collinear points: the 2x2 spread collapses to rank 1.
    let spread_eig = spread.symmetric_eigen().eigenvalues;
    if spread_eig.min() <= 1e-12 * spread_eig.max().max(1.0) {
        return Err(FitError::Degenerate);
    }
    let s3_inv = s3.try_inverse().ok_or(FitError::Degenerate)?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // C1⁻¹ M with C1 = [[0, 0, 2], [0, -1, 0], [2, 0, 0]]
    let reduced = Matrix3::from_rows(&[
        m.row(2) / 2.0,
        -m.row(1),
        m.row(0) / 2.0,
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    let scale = reduced.norm().max(f64::MIN_POSITIVE);
    for ev in reduced.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * scale {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * ev.re)) else {
            continue;
        };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint > 0.0 && best.as_ref().is_none_or(|(l, _)| ev.re.abs() < *l) {
            best = Some((ev.re.abs(), v));
        }
    }
    let (_, quad) = best.ok_or(FitError::NotAnEllipse)?;
    let lin = t * quad;
    Ok(Conic([quad[0], quad[1], quad[2], lin[0], lin[1], lin[2]]))
}

/// Right singular vector of the smallest singular value.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let v: Vector3<f64> = v_t.row(idx).transpose();
    Some(v)
}

/// Direct least-squares conic through the points, constrained to ellipses.
pub fn fit_conic(points: &[[f64; 2]]) -> Result<Conic, FitError> {
    if points.len() < 5 {
        return Err(FitError::InsufficientPoints { got: points.len() });
    }
    let norm = Normalization::new(points)?;
    Ok(norm.denormalize(&fit_normalized(points, &norm)?))
}

/// Fits `(x, y, a, b, θ)` to at least five non-degenerate points.
pub fn fit_ellipse(points: &[[f64; 2]]) -> Result<EllipseParams, FitError> {
    if points.len() < 5 {
        return Err(FitError::InsufficientPoints { got: points.len() });
    }
    let norm = Normalization::new(points)?;
    let conic = fit_normalized(points, &norm)?;
    let e = conic_to_ellipse(&conic)?;
    let inv = 1.0 / norm.scale;
    EllipseParams::canonical(
        e.x * inv + norm.mx,
        e.y * inv + norm.my,
        e.a * inv,
        e.b * inv,
        e.theta,
    )
    .map_err(|_| FitError::NotAnEllipse)
}

/// Geometric parameters of an elliptic conic.
pub fn conic_to_ellipse(conic: &Conic) -> Result<EllipseParams, FitError> {
    if !conic.is_ellipse() {
        return Err(FitError::NotAnEllipse);
    }
    let [a, b, c, d, e, _] = conic.0;
    let denom = 4.0 * a * c - b * b;
    let cx = (b * e - 2.0 * c * d) / denom;
    let cy = (b * d - 2.0 * a * e) / denom;
    let f_center = conic.eval(cx, cy);

    let q = Matrix2::new(a, b / 2.0, b / 2.0, c);
    let eig = q.symmetric_eigen();
    // semi-axis² along eigenvector i is −f_center / λᵢ
    let mut axes = [0.0f64; 2];
    for (i, axis) in axes.iter_mut().enumerate() {
        let sq = -f_center / eig.eigenvalues[i];
        if !(sq > 0.0) || !sq.is_finite() {
            return Err(FitError::NotAnEllipse);
        }
        *axis = 2.0 * sq.sqrt();
    }
    let major = if axes[0] >= axes[1] { 0 } else { 1 };
    let v = eig.eigenvectors.column(major);
    let (full_a, full_b) = (axes[major], axes[1 - major]);
    let theta = if (full_a - full_b).abs() < CIRCLE_EPS {
        0.0
    } else {
        wrap_degrees(v[1].atan2(v[0]).to_degrees())
    };
    EllipseParams::new(cx, cy, full_a, full_b, theta).map_err(|_| FitError::NotAnEllipse)
}
