//! Ellipse model shared by labels, targets and predictions.
//!
//! An ellipse is `(x, y, a, b, θ)`: center in pixels, full major/minor axis
//! lengths in pixels with `a ≥ b > 0`, and the major-axis rotation
//! `θ ∈ [0, 180)` degrees measured from +x towards +y.

mod fit;

use std::io::{Read, Write};

use nalgebra::{Matrix2, Vector2};
use rand::Rng;

use crate::error::{Error, Location, Result};

pub use fit::{conic_to_ellipse, fit_conic, fit_ellipse, Conic};

/// Axis difference below which an ellipse is treated as a circle and its
/// rotation reported as 0.
pub const CIRCLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseParams {
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl EllipseParams {
    /// Checked constructor: requires `a ≥ b > 0` and `θ ∈ [0, 180)`.
    pub fn new(x: f64, y: f64, a: f64, b: f64, theta: f64) -> Result<Self> {
        let e = Self { x, y, a, b, theta };
        e.validate()?;
        Ok(e)
    }

    /// Builds a valid ellipse from arbitrary axis order and angle: axes are
    /// swapped (with a 90° turn) if needed and θ is wrapped into `[0, 180)`.
    pub fn canonical(x: f64, y: f64, a: f64, b: f64, theta: f64) -> Result<Self> {
        let (a, b, theta) = if a >= b { (a, b, theta) } else { (b, a, theta + 90.0) };
        let theta = if (a - b).abs() < CIRCLE_EPS { 0.0 } else { wrap_degrees(theta) };
        Self::new(x, y, a, b, theta)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.a, self.b, self.theta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::arg(format!("non-finite ellipse parameters {self:?}")));
        }
        if !(self.b > 0.0 && self.a >= self.b) {
            return Err(Error::arg(format!("need a >= b > 0, got a={} b={}", self.a, self.b)));
        }
        if !(0.0..180.0).contains(&self.theta) {
            return Err(Error::arg(format!("theta {} outside [0, 180)", self.theta)));
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Implicit form `(p - c)ᵀ Q (p - c) - 1`; zero on the boundary.
    pub fn implicit(&self, p: [f64; 2]) -> f64 {
        let (s, c) = self.theta.to_radians().sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let (ra, rb) = (self.a / 2.0, self.b / 2.0);
        (u / ra).powi(2) + (v / rb).powi(2) - 1.0
    }
}

/// Wraps any angle in degrees into `[0, 180)`.
pub fn wrap_degrees(theta: f64) -> f64 {
    let w = theta.rem_euclid(180.0);
    if w >= 180.0 {
        0.0
    } else {
        w
    }
}

// ── Rotation encoding ──────────────────────────────────────────────────────

/// `(sin 2θ, cos 2θ)`: continuous across the 0°/180° seam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationEncoding {
    pub s: f64,
    pub c: f64,
}

impl RotationEncoding {
    pub fn as_array(&self) -> [f64; 2] {
        [self.s, self.c]
    }
}

pub fn encode_rotation(theta: f64) -> Result<RotationEncoding> {
    if !(0.0..180.0).contains(&theta) {
        return Err(Error::arg(format!("theta {theta} outside [0, 180)")));
    }
    let (s, c) = (2.0 * theta).to_radians().sin_cos();
    Ok(RotationEncoding { s, c })
}

/// Projects a raw `(ŝ, ĉ)` prediction onto the unit circle.
pub fn normalize_rotation(raw: [f64; 2]) -> Result<RotationEncoding> {
    let norm = raw[0].hypot(raw[1]);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    Ok(RotationEncoding {
        s: raw[0] / norm,
        c: raw[1] / norm,
    })
}

/// Normalizes a raw `(ŝ, ĉ)` prediction and recovers θ in `[0, 180)` degrees.
pub fn decode_rotation(raw: [f64; 2]) -> Result<f64> {
    let r = normalize_rotation(raw)?;
    let two_theta = r.s.atan2(r.c).rem_euclid(std::f64::consts::TAU);
    Ok(wrap_degrees(two_theta.to_degrees() / 2.0))
}

// ── Gaussian form ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEllipse {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

#[inline]
pub(crate) fn rotation_matrix(theta_deg: f64) -> Matrix2<f64> {
    let (s, c) = theta_deg.to_radians().sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Gaussian from raw `(x, y, a, b, θ)` without canonicalizing axis order.
/// `Σ = R(θ) · diag((a/2)², (b/2)²) · R(θ)ᵀ`.
pub fn gaussian_from_raw(x: f64, y: f64, a: f64, b: f64, theta_deg: f64) -> GaussianEllipse {
    let r = rotation_matrix(theta_deg);
    let d = Matrix2::new((a / 2.0).powi(2), 0.0, 0.0, (b / 2.0).powi(2));
    let mut cov = r * d * r.transpose();
    // exact symmetry
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    GaussianEllipse {
        mean: Vector2::new(x, y),
        cov,
    }
}

pub fn ellipse_to_gaussian(e: &EllipseParams) -> GaussianEllipse {
    gaussian_from_raw(e.x, e.y, e.a, e.b, e.theta)
}

// ── Augmentation transforms ────────────────────────────────────────────────

/// Label-side geometry of an image augmentation.
///
/// Applied in order: horizontal flip (`x → W − 1 − x`), then rotation by
/// `rotation` degrees and scaling by `scale` about the frame center
/// `(W/2, H/2)`, then translation by `(dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
    pub hflip: bool,
    pub width: f64,
    pub height: f64,
}

impl SimilarityTransform {
    pub fn identity(width: f64, height: f64) -> Self {
        Self {
            rotation: 0.0,
            scale: 1.0,
            dx: 0.0,
            dy: 0.0,
            hflip: false,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::arg(format!("scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }

    fn pivot(&self) -> Vector2<f64> {
        Vector2::new(self.width / 2.0, self.height / 2.0)
    }

    /// Maps a point through the transform.
    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        let x = if self.hflip { self.width - 1.0 - p[0] } else { p[0] };
        let c = self.pivot();
        let q = rotation_matrix(self.rotation) * (Vector2::new(x, p[1]) - c) * self.scale
            + c
            + Vector2::new(self.dx, self.dy);
        [q.x, q.y]
    }

    /// `self` followed by `next`, for flip-free transforms on the same frame.
    /// Returns `None` when either side flips or the frames differ.
    pub fn then(&self, next: &SimilarityTransform) -> Option<SimilarityTransform> {
        if self.hflip || next.hflip || self.width != next.width || self.height != next.height {
            return None;
        }
        let d = rotation_matrix(next.rotation) * Vector2::new(self.dx, self.dy) * next.scale
            + Vector2::new(next.dx, next.dy);
        Some(SimilarityTransform {
            rotation: self.rotation + next.rotation,
            scale: self.scale * next.scale,
            dx: d.x,
            dy: d.y,
            hflip: false,
            width: self.width,
            height: self.height,
        })
    }
}

pub fn transform_ellipse(e: &EllipseParams, t: &SimilarityTransform) -> Result<EllipseParams> {
    t.validate()?;
    let [x, y] = t.apply_point(e.center());
    let theta = if t.hflip { 180.0 - e.theta } else { e.theta } + t.rotation;
    EllipseParams::canonical(x, y, e.a * t.scale, e.b * t.scale, theta)
}

// ── Boundary sampling ──────────────────────────────────────────────────────

/// Boundary point at curve parameter `t` (radians).
#[inline]
pub fn boundary_point(e: &EllipseParams, t: f64) -> [f64; 2] {
    let (s, c) = e.theta.to_radians().sin_cos();
    let (u, v) = (e.a / 2.0 * t.cos(), e.b / 2.0 * t.sin());
    [e.x + c * u - s * v, e.y + s * u + c * v]
}

/// `n` boundary points at uniformly spaced parameters starting at `t = 0`
/// (the major-axis endpoint).
pub fn sample_boundary(e: &EllipseParams, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| boundary_point(e, std::f64::consts::TAU * i as f64 / n as f64))
        .collect()
}

/// Like [`sample_boundary`], each point displaced uniformly within a disk of
/// radius `jitter`.
pub fn sample_boundary_jittered<R: Rng + ?Sized>(
    e: &EllipseParams,
    n: usize,
    jitter: f64,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let mut pts = sample_boundary(e, n);
    if jitter > 0.0 {
        for p in &mut pts {
            let r = jitter * rng.gen::<f64>().sqrt();
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            p[0] += r * phi.cos();
            p[1] += r * phi.sin();
        }
    }
    pts
}

// ── Label files ────────────────────────────────────────────────────────────

pub const LABEL_HEADER: &str = "t_end,x,y,a,b,theta_deg";

/// One ellipse attached to a representation timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub t_end: u64,
    pub ellipse: EllipseParams,
}

pub fn write_labels<W: Write>(labels: &[Label], mut writer: W) -> Result<()> {
    writeln!(writer, "{LABEL_HEADER}")?;
    for l in labels {
        let e = &l.ellipse;
        writeln!(writer, "{},{},{},{},{},{}", l.t_end, e.x, e.y, e.a, e.b, e.theta)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<Label>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(Location::Line(1), e.to_string()))?;
    if headers.iter().collect::<Vec<_>>().join(",") != LABEL_HEADER {
        return Err(Error::format(Location::Line(1), format!("expected header {LABEL_HEADER}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            Error::format(Location::Line(e.position().map_or(0, |p| p.line())), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::format(Location::Line(line), format!("invalid {what}"));
        let t_end: u64 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("t_end"))?;
        let mut v = [0.0f64; 5];
        for (i, name) in ["x", "y", "a", "b", "theta_deg"].iter().enumerate() {
            v[i] = rec.get(i + 1).and_then(|s| s.parse().ok()).ok_or_else(|| bad(name))?;
        }
        let ellipse = EllipseParams::new(v[0], v[1], v[2], v[3], v[4])
            .map_err(|e| Error::format(Location::Line(line), e.to_string()))?;
        out.push(Label { t_end, ellipse });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(x: f64, y: f64, a: f64, b: f64, t: f64) -> EllipseParams {
        EllipseParams::new(x, y, a, b, t).unwrap()
    }

    #[test]
    fn encode_examples() {
        let r = encode_rotation(0.0).unwrap();
        assert_eq!((r.s, r.c), (0.0, 1.0));
        let r = encode_rotation(90.0).unwrap();
        assert!(r.s.abs() < 1e-15 && (r.c + 1.0).abs() < 1e-15);
        let r = encode_rotation(45.0).unwrap();
        assert!((r.s - 1.0).abs() < 1e-15 && r.c.abs() < 1e-15);
        assert!(encode_rotation(180.0).is_err());
        assert!(encode_rotation(-0.5).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_rotation([0.0, 1.0]).unwrap(), 0.0);
        // (0.02, -2.0) normalizes to 2θ = 180° - atan(0.01)
        let expected = (180.0 - (0.01f64).atan().to_degrees()) / 2.0;
        let got = decode_rotation([0.02, -2.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 89.713).abs() < 1e-3);
        let got = decode_rotation([-0.0349, 0.99939]).unwrap();
        assert!((got - 179.0).abs() < 0.01, "{got}");
        assert!(matches!(decode_rotation([0.0, 0.0]), Err(Error::DegenerateRotation)));
    }

    #[test]
    fn seam_round_trip() {
        for theta in [0.0, 1e-9, 179.999, 179.999_999, 90.0] {
            let enc = encode_rotation(theta).unwrap();
            let back = decode_rotation(enc.as_array()).unwrap();
            assert!((back - theta).abs() < 1e-9, "{theta} -> {back}");
        }
        // tiny negative sine lands on the seam and must wrap to 0, not 180
        assert!(decode_rotation([-1e-18, 1.0]).unwrap() < 180.0);
    }

    #[test]
    fn gaussian_examples() {
        for theta in [0.0, 33.0, 120.0] {
            let g = ellipse_to_gaussian(&e(0.0, 0.0, 4.0, 4.0, theta));
            assert!((g.cov - Matrix2::identity() * 4.0).norm() < 1e-12);
        }
        let g = ellipse_to_gaussian(&e(1.0, 2.0, 8.0, 4.0, 0.0));
        assert_eq!(g.cov, Matrix2::new(16.0, 0.0, 0.0, 4.0));
        assert_eq!(g.mean, Vector2::new(1.0, 2.0));
        let g = ellipse_to_gaussian(&e(0.0, 0.0, 8.0, 4.0, 90.0));
        assert!((g.cov - Matrix2::new(4.0, 0.0, 0.0, 16.0)).norm() < 1e-12);
    }

    #[test]
    fn hflip_example_and_involution() {
        let mut t = SimilarityTransform::identity(64.0, 64.0);
        t.hflip = true;
        let base = e(10.0, 20.0, 8.0, 4.0, 30.0);
        let f = transform_ellipse(&base, &t).unwrap();
        assert!((f.x - 53.0).abs() < 1e-12 && f.y == 20.0);
        assert!((f.theta - 150.0).abs() < 1e-12);
        assert_eq!((f.a, f.b), (8.0, 4.0));
        let ff = transform_ellipse(&f, &t).unwrap();
        assert!((ff.x - base.x).abs() < 1e-12 && (ff.theta - base.theta).abs() < 1e-12);
        // θ = 0 must flip to 0, not 180
        let z = transform_ellipse(&e(5.0, 5.0, 8.0, 4.0, 0.0), &t).unwrap();
        assert_eq!(z.theta, 0.0);
    }

    #[test]
    fn rotation_wraps() {
        let mut t = SimilarityTransform::identity(64.0, 64.0);
        t.rotation = 170.0;
        let r = transform_ellipse(&e(32.0, 32.0, 8.0, 4.0, 20.0), &t).unwrap();
        assert!((r.theta - 10.0).abs() < 1e-9);
        assert!((r.x - 32.0).abs() < 1e-12 && (r.y - 32.0).abs() < 1e-12);
    }

    #[test]
    fn scale_and_translate() {
        let t = SimilarityTransform {
            scale: 2.0,
            dx: 1.0,
            dy: -3.0,
            ..SimilarityTransform::identity(64.0, 64.0)
        };
        let r = transform_ellipse(&e(40.0, 30.0, 8.0, 4.0, 60.0), &t).unwrap();
        assert_eq!((r.x, r.y, r.a, r.b, r.theta), (49.0, 25.0, 16.0, 8.0, 60.0));
        let bad = SimilarityTransform { scale: 0.0, ..t };
        assert!(transform_ellipse(&e(40.0, 30.0, 8.0, 4.0, 60.0), &bad).is_err());
    }

    #[test]
    fn sample_examples() {
        let circle = e(5.0, 7.0, 4.0, 4.0, 0.0);
        for p in sample_boundary(&circle, 4) {
            assert!(((p[0] - 5.0).hypot(p[1] - 7.0) - 2.0).abs() < 1e-12);
        }
        let single = sample_boundary(&e(0.0, 0.0, 10.0, 2.0, 90.0), 1);
        assert_eq!(single.len(), 1);
        assert!(single[0][0].abs() < 1e-12 && (single[0][1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_swaps_axes() {
        let c = EllipseParams::canonical(0.0, 0.0, 4.0, 8.0, 10.0).unwrap();
        assert_eq!((c.a, c.b, c.theta), (8.0, 4.0, 100.0));
        assert!(EllipseParams::new(0.0, 0.0, 4.0, 8.0, 10.0).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let labels = vec![
            Label { t_end: 10, ellipse: e(1.5, 2.25, 8.0, 4.0, 179.5) },
            Label { t_end: 20, ellipse: e(0.1, 0.2, 3.0, 3.0, 0.0) },
        ];
        let mut buf = Vec::new();
        write_labels(&labels, &mut buf).unwrap();
        assert!(buf.starts_with(LABEL_HEADER.as_bytes()));
        assert_eq!(read_labels(&buf[..]).unwrap(), labels);
        assert!(read_labels("t_end,x,y,a,b,theta_deg\n1,0,0,2,4,0\n".as_bytes()).is_err());
    }

    fn arb_ellipse() -> impl Strategy<Value = EllipseParams> {
        (-50.0..50.0f64, -50.0..50.0f64, 1.0..30.0f64, 0.05..1.0f64, 0.0..180.0f64)
            .prop_map(|(x, y, a, ratio, t)| e(x, y, a, a * ratio, t))
    }

    proptest! {
        #[test]
        fn rotation_round_trip(theta in 0.0..180.0f64) {
            let back = decode_rotation(encode_rotation(theta).unwrap().as_array()).unwrap();
            let diff = (back - theta).abs();
            prop_assert!(diff.min(180.0 - diff) < 1e-9);
        }

        #[test]
        fn gaussian_eigenvalues_are_squared_semi_axes(el in arb_ellipse()) {
            let g = ellipse_to_gaussian(&el);
            let eig = g.cov.symmetric_eigen().eigenvalues;
            let (lo, hi) = (eig[0].min(eig[1]), eig[0].max(eig[1]));
            let scale = (el.a / 2.0).powi(2);
            prop_assert!((hi - scale).abs() < 1e-9 * scale);
            prop_assert!((lo - (el.b / 2.0).powi(2)).abs() < 1e-9 * scale);
        }

        #[test]
        fn flipped_encoding_negates_sine(el in arb_ellipse()) {
            prop_assume!(el.a - el.b > 1e-6);
            let t = SimilarityTransform { hflip: true, ..SimilarityTransform::identity(64.0, 64.0) };
            let f = transform_ellipse(&el, &t).unwrap();
            let (r, rf) = (encode_rotation(el.theta).unwrap(), encode_rotation(f.theta).unwrap());
            prop_assert!((rf.s + r.s).abs() < 1e-9);
            prop_assert!((rf.c - r.c).abs() < 1e-9);
        }

        #[test]
        fn rigid_transforms_compose(
            el in arb_ellipse(),
            r1 in -180.0..180.0f64, r2 in -180.0..180.0f64,
            d1 in (-5.0..5.0f64, -5.0..5.0f64), d2 in (-5.0..5.0f64, -5.0..5.0f64),
        ) {
            prop_assume!(el.a - el.b > 1e-6);
            let base = SimilarityTransform::identity(64.0, 48.0);
            let t1 = SimilarityTransform { rotation: r1, dx: d1.0, dy: d1.1, ..base };
            let t2 = SimilarityTransform { rotation: r2, dx: d2.0, dy: d2.1, ..base };
            let seq = transform_ellipse(&transform_ellipse(&el, &t1).unwrap(), &t2).unwrap();
            let once = transform_ellipse(&el, &t1.then(&t2).unwrap()).unwrap();
            prop_assert!((seq.x - once.x).abs() < 1e-9 && (seq.y - once.y).abs() < 1e-9);
            let dt = (seq.theta - once.theta).abs();
            prop_assert!(dt.min(180.0 - dt) < 1e-9);
        }

        #[test]
        fn samples_satisfy_implicit_equation(el in arb_ellipse(), n in 1usize..64) {
            for p in sample_boundary(&el, n) {
                prop_assert!(el.implicit(p).abs() < 1e-9);
            }
        }
    }
}
