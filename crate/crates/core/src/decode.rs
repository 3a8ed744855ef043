//! Head decoding, evaluation metrics and a classical detector.

use std::fmt;

use crate::accumulate::Representation;
use crate::ellipse::{decode_rotation, fit_ellipse, EllipseParams};
use crate::error::{Error, FitError, Location, Result};
use crate::grid::Grid;
use crate::losses::HeadTargets;

/// Evaluation distances for `P_n`.
pub const PN_THRESHOLDS: [f64; 3] = [10.0, 5.0, 1.0];

/// Four dense head outputs sharing one `H×W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPrediction {
    pub heatmap: Grid,
    /// `(dx, dy)` channels.
    pub offset: [Grid; 2],
    /// `(a, b)` channels.
    pub size: [Grid; 2],
    /// Raw `(ŝ, ĉ)` channels.
    pub rotation: [Grid; 2],
}

impl HeadPrediction {
    pub fn zeros(width: usize, height: usize) -> Self {
        let z = || Grid::zeros(width, height);
        Self {
            heatmap: z(),
            offset: [z(), z()],
            size: [z(), z()],
            rotation: [z(), z()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.heatmap;
        let all_match = self
            .offset
            .iter()
            .chain(&self.size)
            .chain(&self.rotation)
            .all(|g| g.same_shape(h));
        if !all_match {
            return Err(Error::arg("head grids must share the heatmap shape"));
        }
        Ok(())
    }

    /// Prediction that reproduces the targets exactly: the target heatmap,
    /// with offset/size/rotation written at the center cell.
    pub fn from_targets(t: &HeadTargets) -> Self {
        let mut p = Self::zeros(t.heatmap.width(), t.heatmap.height());
        p.heatmap = t.heatmap.clone();
        let (r, c) = t.center_cell;
        p.offset[0].set(r, c, t.offset[0]);
        p.offset[1].set(r, c, t.offset[1]);
        p.size[0].set(r, c, t.size[0]);
        p.size[1].set(r, c, t.size[1]);
        p.rotation[0].set(r, c, t.rotation.s);
        p.rotation[1].set(r, c, t.rotation.c);
        p
    }
}

/// Ellipse at the heatmap peak. Ties go to the smallest row, then column.
pub fn decode_prediction(pred: &HeadPrediction) -> Result<EllipseParams> {
    pred.validate()?;
    let (r, c) = pred
        .heatmap
        .argmax()
        .ok_or_else(|| Error::Decode("empty heatmap".into()))?;
    let at = |g: &Grid| g.get(r, c);
    let values = [
        at(&pred.heatmap),
        at(&pred.offset[0]),
        at(&pred.offset[1]),
        at(&pred.size[0]),
        at(&pred.size[1]),
        at(&pred.rotation[0]),
        at(&pred.rotation[1]),
    ];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decode(format!("non-finite head value at peak ({r}, {c})")));
    }
    let [_, ox, oy, a, b, s, cc] = values;
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Decode(format!("non-positive size ({a}, {b}) at peak ({r}, {c})")));
    }
    let theta = decode_rotation([s, cc]).map_err(|e| Error::Decode(e.to_string()))?;
    EllipseParams::canonical(c as f64 + ox, r as f64 + oy, a, b, theta)
        .map_err(|e| Error::Decode(e.to_string()))
}

// ── Metrics ────────────────────────────────────────────────────────────────

fn distances(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::arg(format!(
            "{} predictions vs {} ground-truth centers",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::arg("no samples to evaluate"));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1]))
        .collect())
}

/// Percentage of predictions within `n` pixels (inclusive) of the truth.
pub fn pn_metric(pred: &[[f64; 2]], gt: &[[f64; 2]], n: f64) -> Result<f64> {
    let d = distances(pred, gt)?;
    Ok(pn_from_distances(&d, n))
}

fn pn_from_distances(d: &[f64], n: f64) -> f64 {
    100.0 * d.iter().filter(|&&x| x <= n).count() as f64 / d.len() as f64
}

/// Mean Euclidean center distance in pixels.
pub fn pixel_error(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    let d = distances(pred, gt)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub p10: f64,
    pub p5: f64,
    pub p1: f64,
    pub pe: f64,
    pub n_samples: usize,
}

pub fn evaluate(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<EvalReport> {
    let d = distances(pred, gt)?;
    Ok(EvalReport {
        p10: pn_from_distances(&d, PN_THRESHOLDS[0]),
        p5: pn_from_distances(&d, PN_THRESHOLDS[1]),
        p1: pn_from_distances(&d, PN_THRESHOLDS[2]),
        pe: d.iter().sum::<f64>() / d.len() as f64,
        n_samples: d.len(),
    })
}

impl EvalReport {
    /// Machine-readable `key=value` form.
    pub fn to_kv(&self) -> String {
        format!(
            "p10={}\np5={}\np1={}\npe={}\nn={}\n",
            self.p10, self.p5, self.p1, self.pe, self.n_samples
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 4] = [None; 4];
        let mut n = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let loc = Location::Line(i as u64 + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(loc, format!("expected key=value, got {line:?}")))?;
            let bad = || Error::format(loc, format!("invalid value for {k}"));
            match k.trim() {
                "p10" => vals[0] = Some(v.trim().parse().map_err(|_| bad())?),
                "p5" => vals[1] = Some(v.trim().parse().map_err(|_| bad())?),
                "p1" => vals[2] = Some(v.trim().parse().map_err(|_| bad())?),
                "pe" => vals[3] = Some(v.trim().parse().map_err(|_| bad())?),
                "n" => n = Some(v.trim().parse().map_err(|_| bad())?),
                other => return Err(Error::format(loc, format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::format(Location::Line(0), format!("missing key {k}"));
        Ok(Self {
            p10: vals[0].ok_or_else(|| missing("p10"))?,
            p5: vals[1].ok_or_else(|| missing("p5"))?,
            p1: vals[2].ok_or_else(|| missing("p1"))?,
            pe: vals[3].ok_or_else(|| missing("pe"))?,
            n_samples: n.ok_or_else(|| missing("n"))?,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples  {}", self.n_samples)?;
        writeln!(f, "P10      {:.2} %", self.p10)?;
        writeln!(f, "P5       {:.2} %", self.p5)?;
        writeln!(f, "P1       {:.2} %", self.p1)?;
        write!(f, "PE       {:.4} px", self.pe)
    }
}

// ── Classical detector ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Quantile of the non-zero activity values used as the activity cut.
    pub quantile: f64,
    pub min_points: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            quantile: 0.5,
            min_points: 12,
        }
    }
}

/// Linear-interpolated quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Fits an ellipse to the most active pixels of a representation.
///
/// Activity is `|v_pos| + |v_neg|`. Pixels at or above the `quantile` of the
/// non-zero activities are fitted as `(col, row)` points. Too few active
/// pixels yields [`Error::DetectionFailed`].
pub fn detect_classical(rep: &Representation, quantile: f64, min_points: usize) -> Result<EllipseParams> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::arg(format!("quantile {quantile} outside [0, 1]")));
    }
    if rep.width == 0 || rep.height == 0 {
        return Err(Error::arg("empty representation"));
    }
    let required = min_points.max(5);
    let activity = rep.combined();
    let mut nonzero: Vec<f64> = activity.as_slice().iter().copied().filter(|v| *v > 0.0).collect();
    if nonzero.len() < required {
        return Err(Error::DetectionFailed {
            active: nonzero.len(),
            required,
        });
    }
    nonzero.sort_by(f64::total_cmp);
    let cut = quantile_sorted(&nonzero, quantile);
    let points: Vec<[f64; 2]> = (0..rep.height)
        .flat_map(|r| (0..rep.width).map(move |c| (r, c)))
        .filter(|&(r, c)| {
            let v = activity.get(r, c);
            v > 0.0 && v >= cut
        })
        .map(|(r, c)| [c as f64, r as f64])
        .collect();
    if points.len() < required {
        return Err(Error::DetectionFailed {
            active: points.len(),
            required,
        });
    }
    fit_ellipse(&points).map_err(|e| match e {
        FitError::InsufficientPoints { got } => Error::DetectionFailed {
            active: got,
            required,
        },
        other => Error::Fit(other),
    })
}
