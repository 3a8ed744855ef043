//! Training losses and target generation.
//!
//! The total loss is `λ_H L_H + λ_O L_O + λ_S L_S + λ_G L_G + λ_T L_T`:
//!
//! | term  | what                                                        |
//! |-------|-------------------------------------------------------------|
//! | `L_H` | penalty-reduced focal loss on the center heatmap (α=2, β=4)  |
//! | `L_O` | smooth L1 on the sub-cell center offset at the peak cell     |
//! | `L_S` | smooth L1 on `(a, b)` at the peak cell                       |
//! | `L_G` | Gaussian Wasserstein loss `1 − 1/(1 + W₂)`                   |
//! | `L_T` | squared L2 between `(sin 2θ, cos 2θ)` encodings             |
//!
//! [`angle_loss`] is the plain L1 baseline (radians) that `L_T` replaces.

use nalgebra::Matrix2;

use crate::decode::HeadPrediction;
use crate::ellipse::{
    decode_rotation, encode_rotation, gaussian_from_raw, normalize_rotation, rotation_matrix,
    EllipseParams, GaussianEllipse, RotationEncoding,
};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const FOCAL_ALPHA: f64 = 2.0;
pub const FOCAL_BETA: f64 = 4.0;
pub const FOCAL_EPS: f64 = 1e-12;

// ── Angle losses ───────────────────────────────────────────────────────────

/// `‖r(θ_p) − r(θ_g)‖²` on the `(sin 2θ, cos 2θ)` circle. Range `[0, 4]`.
pub fn trig_loss(theta_p: f64, theta_g: f64) -> Result<f64> {
    let p = encode_rotation(theta_p)?;
    let g = encode_rotation(theta_g)?;
    Ok(sq_dist(p, g))
}

/// Trigonometric loss for a raw, unnormalized `(ŝ, ĉ)` prediction.
pub fn trig_loss_raw(raw: [f64; 2], theta_g: f64) -> Result<f64> {
    let p = normalize_rotation(raw)?;
    let g = encode_rotation(theta_g)?;
    Ok(sq_dist(p, g))
}

#[inline]
fn sq_dist(p: RotationEncoding, g: RotationEncoding) -> f64 {
    (p.s - g.s).powi(2) + (p.c - g.c).powi(2)
}

/// ∂L_T/∂θ_p with θ_p in degrees.
pub fn trig_loss_grad_theta(theta_p: f64, theta_g: f64) -> Result<f64> {
    let p = encode_rotation(theta_p)?;
    let g = encode_rotation(theta_g)?;
    // dr/dθ = 2 (cos 2θ, −sin 2θ) per radian
    let dr = [2.0 * p.c, -2.0 * p.s];
    let rad = std::f64::consts::PI / 180.0;
    Ok(2.0 * ((p.s - g.s) * dr[0] + (p.c - g.c) * dr[1]) * rad)
}

/// ∂L_T/∂(ŝ, ĉ) for a raw prediction, through the normalization.
pub fn trig_loss_grad_raw(raw: [f64; 2], theta_g: f64) -> Result<[f64; 2]> {
    let u = normalize_rotation(raw)?;
    let g = encode_rotation(theta_g)?;
    let norm = raw[0].hypot(raw[1]);
    let e = [2.0 * (u.s - g.s), 2.0 * (u.c - g.c)];
    // (I − u uᵀ) e / ‖r‖
    let dot = u.s * e[0] + u.c * e[1];
    Ok([(e[0] - u.s * dot) / norm, (e[1] - u.c * dot) / norm])
}

/// L1 angle loss `|θ_p − θ_g|` in radians, with no wrap-around.
pub fn angle_loss(theta_p: f64, theta_g: f64) -> f64 {
    (theta_p - theta_g).abs().to_radians()
}

// ── Heatmap focal loss ─────────────────────────────────────────────────────

/// Penalty-reduced pixelwise focal loss with α = 2, β = 4.
pub fn focal_heatmap_loss(pred: &Grid, target: &Grid) -> Result<f64> {
    focal_heatmap_loss_with(pred, target, FOCAL_ALPHA, FOCAL_BETA)
}

/// Focal loss with explicit exponents. Cells where the target is exactly 1
/// are positives; the sum is divided by the positive count (or 1 if none).
/// Predictions are clamped to `[ε, 1 − ε]`.
pub fn focal_heatmap_loss_with(pred: &Grid, target: &Grid, alpha: f64, beta: f64) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::arg(format!(
            "heatmap shapes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    let mut clamped = 0usize;
    let mut n_pos = 0usize;
    let mut sum = 0.0;
    for (&p_raw, &y) in pred.as_slice().iter().zip(target.as_slice()) {
        let p = p_raw.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
        if p != p_raw {
            clamped += 1;
        }
        if y == 1.0 {
            n_pos += 1;
            sum += (1.0 - p).powf(alpha) * p.ln();
        } else {
            sum += (1.0 - y).powf(beta) * p.powf(alpha) * (1.0 - p).ln();
        }
    }
    if clamped > 0 {
        log::debug!("focal loss: clamped {clamped} predictions to [{FOCAL_EPS}, 1 - {FOCAL_EPS}]");
    }
    Ok(-sum / n_pos.max(1) as f64)
}

// ── Smooth L1 ──────────────────────────────────────────────────────────────

/// Mean Huber loss with the transition at |d| = 1.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::arg(format!(
            "smooth L1 length mismatch: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum();
    Ok(total / pred.len() as f64)
}

// ── Gaussian Wasserstein ───────────────────────────────────────────────────

/// Squared 2-Wasserstein distance between two 2D Gaussians, closed form:
/// `‖μ₁−μ₂‖² + tr Σ₁ + tr Σ₂ − 2·√(tr(Σ₁Σ₂) + 2·√(det Σ₁ · det Σ₂))`.
pub fn wasserstein2_sq(g1: &GaussianEllipse, g2: &GaussianEllipse) -> f64 {
    let dm = g1.mean - g2.mean;
    let cross = (g1.cov * g2.cov).trace() + 2.0 * (g1.cov.determinant() * g2.cov.determinant()).max(0.0).sqrt();
    let w2 = dm.norm_squared() + g1.cov.trace() + g2.cov.trace() - 2.0 * cross.max(0.0).sqrt();
    w2.max(0.0)
}

/// Normalized loss from a squared Wasserstein distance.
#[inline]
pub fn gwd_normalize(w2: f64) -> f64 {
    1.0 - 1.0 / (1.0 + w2.sqrt())
}

pub fn gwd_distance_sq(e_p: &EllipseParams, e_g: &EllipseParams) -> f64 {
    wasserstein2_sq(&crate::ellipse::ellipse_to_gaussian(e_p), &crate::ellipse::ellipse_to_gaussian(e_g))
}

pub fn gwd_loss(e_p: &EllipseParams, e_g: &EllipseParams) -> f64 {
    gwd_normalize(gwd_distance_sq(e_p, e_g))
}

/// GWD loss on raw `[x, y, a, b, θ]` parameter vectors (any axis order).
pub fn gwd_loss_raw(p: [f64; 5], g: [f64; 5]) -> f64 {
    let gp = gaussian_from_raw(p[0], p[1], p[2], p[3], p[4]);
    let gg = gaussian_from_raw(g[0], g[1], g[2], g[3], g[4]);
    gwd_normalize(wasserstein2_sq(&gp, &gg))
}

/// Analytic gradient of [`gwd_loss_raw`] with respect to the predicted
/// `[x, y, a, b, θ]` (θ in degrees). Undefined when the ellipses coincide.
pub fn gwd_loss_grad(p: [f64; 5], g: [f64; 5]) -> [f64; 5] {
    let gp = gaussian_from_raw(p[0], p[1], p[2], p[3], p[4]);
    let gg = gaussian_from_raw(g[0], g[1], g[2], g[3], g[4]);
    let (s1, s2) = (gp.cov, gg.cov);
    let (d1, d2) = (s1.determinant(), s2.determinant());
    let root_det = (d1 * d2).sqrt();
    let k = ((s1 * s2).trace() + 2.0 * root_det).sqrt();

    let w2 = wasserstein2_sq(&gp, &gg);
    let w = w2.sqrt();
    let dl_dw2 = 1.0 / ((1.0 + w).powi(2) * 2.0 * w);

    let (a, b) = (p[2], p[3]);
    let r = rotation_matrix(p[4]);
    let (sn, cs) = p[4].to_radians().sin_cos();
    let dr = Matrix2::new(-sn, -cs, cs, -sn) * (std::f64::consts::PI / 180.0);
    let diag = Matrix2::new((a / 2.0).powi(2), 0.0, 0.0, (b / 2.0).powi(2));

    let d_sigma = [
        r * Matrix2::new(a / 2.0, 0.0, 0.0, 0.0) * r.transpose(),
        r * Matrix2::new(0.0, 0.0, 0.0, b / 2.0) * r.transpose(),
        dr * diag * r.transpose() + r * diag * dr.transpose(),
    ];
    // det Σ₁ = (ab/4)²
    let d_det = [a * b * b / 8.0, a * a * b / 8.0, 0.0];

    let dm = gp.mean - gg.mean;
    let mut grad = [2.0 * dm.x * dl_dw2, 2.0 * dm.y * dl_dw2, 0.0, 0.0, 0.0];
    for i in 0..3 {
        let ds = &d_sigma[i];
        let d_cross = (ds * s2).trace() + if root_det > 0.0 { d2 * d_det[i] / root_det } else { 0.0 };
        let dw2 = ds.trace() - d_cross / k;
        grad[2 + i] = dw2 * dl_dw2;
    }
    grad
}

// ── Targets ────────────────────────────────────────────────────────────────

/// Ground-truth side of the four heads for one label.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTargets {
    pub heatmap: Grid,
    /// `(row, col)` of the cell containing the center.
    pub center_cell: (usize, usize),
    /// Fractional center position inside the cell, `(dx, dy) ∈ [0, 1)²`.
    pub offset: [f64; 2],
    pub size: [f64; 2],
    pub rotation: RotationEncoding,
    pub label: EllipseParams,
}

/// Heatmap spread for an ellipse: `max(1, min(a, b) / 6)`.
pub fn heatmap_sigma(e: &EllipseParams) -> f64 {
    (e.a.min(e.b) / 6.0).max(1.0)
}

pub fn make_targets(label: &EllipseParams, width: usize, height: usize) -> Result<HeadTargets> {
    label.validate()?;
    if !(label.x >= 0.0 && label.y >= 0.0 && label.x < width as f64 && label.y < height as f64) {
        return Err(Error::arg(format!(
            "label center ({}, {}) outside {width}x{height} grid",
            label.x, label.y
        )));
    }
    let (col, row) = (label.x.floor() as usize, label.y.floor() as usize);
    let sigma = heatmap_sigma(label);
    let denom = 2.0 * sigma * sigma;
    let mut heatmap = Grid::zeros(width, height);
    for r in 0..height {
        let dy = r as f64 - row as f64;
        for c in 0..width {
            let dx = c as f64 - col as f64;
            heatmap.set(r, c, (-(dx * dx + dy * dy) / denom).exp());
        }
    }
    Ok(HeadTargets {
        heatmap,
        center_cell: (row, col),
        offset: [label.x - col as f64, label.y - row as f64],
        size: [label.a, label.b],
        rotation: encode_rotation(label.theta)?,
        label: *label,
    })
}

// ── Total loss ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub heatmap: f64,
    pub offset: f64,
    pub size: f64,
    pub gwd: f64,
    pub trig: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            heatmap: 1.0,
            offset: 1.0,
            size: 1.0,
            gwd: 1.0,
            trig: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            heatmap: 0.0,
            offset: 0.0,
            size: 0.0,
            gwd: 0.0,
            trig: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.heatmap, self.offset, self.size, self.gwd, self.trig];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::arg(format!("loss weights must be >= 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted per-term values plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub heatmap: f64,
    pub offset: f64,
    pub size: f64,
    pub gwd: f64,
    pub trig: f64,
    pub total: f64,
}

/// Full loss. Offset, size, GWD and rotation terms are read from the
/// prediction at the ground-truth peak cell.
pub fn total_loss(pred: &HeadPrediction, targets: &HeadTargets, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    pred.validate()?;
    if !pred.heatmap.same_shape(&targets.heatmap) {
        return Err(Error::arg("prediction and target grids differ in shape"));
    }
    let (row, col) = targets.center_cell;
    let at = |g: &Grid| g.get(row, col);
    let offset_p = [at(&pred.offset[0]), at(&pred.offset[1])];
    let size_p = [at(&pred.size[0]), at(&pred.size[1])];
    let rot_p = [at(&pred.rotation[0]), at(&pred.rotation[1])];
    if !(size_p[0] > 0.0 && size_p[1] > 0.0) {
        return Err(Error::arg(format!("predicted size must be positive, got {size_p:?}")));
    }

    let heatmap = focal_heatmap_loss(&pred.heatmap, &targets.heatmap)?;
    let offset = smooth_l1(&offset_p, &targets.offset)?;
    let size = smooth_l1(&size_p, &targets.size)?;
    let theta_p = decode_rotation(rot_p)?;
    let l = &targets.label;
    let gwd = gwd_loss_raw(
        [col as f64 + offset_p[0], row as f64 + offset_p[1], size_p[0], size_p[1], theta_p],
        [l.x, l.y, l.a, l.b, l.theta],
    );
    let trig = trig_loss_raw(rot_p, l.theta)?;

    let total = weights.heatmap * heatmap
        + weights.offset * offset
        + weights.size * size
        + weights.gwd * gwd
        + weights.trig * trig;
    Ok(LossBreakdown {
        heatmap,
        offset,
        size,
        gwd,
        trig,
        total,
    })
}
