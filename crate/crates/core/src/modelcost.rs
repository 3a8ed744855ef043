//! Analytic parameter / MAC counts for convolutional building blocks.
//!
//! Conventions: `same` padding, so strided layers produce `⌈H/s⌉ × ⌈W/s⌉`;
//! biases count as parameters but not MACs; FLOPs = 2·MACs.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Standard `k×k` convolution.
    Conv,
    /// Depthwise `k×k` followed by pointwise `1×1`.
    Dsc,
    /// Squeeze-and-excitation; the kernel field holds the reduction ratio.
    Se,
    /// Nearest-neighbour upsampling by the stride factor.
    Upsample,
    /// `k×k` conv `cin→cin` then `1×1` conv `cin→cout`.
    Head,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dsc => "dsc",
            LayerKind::Se => "se",
            LayerKind::Upsample => "upsample",
            LayerKind::Head => "head",
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "conv" => LayerKind::Conv,
            "dsc" => LayerKind::Dsc,
            "se" => LayerKind::Se,
            "upsample" => LayerKind::Upsample,
            "head" => LayerKind::Head,
            other => return Err(Error::Graph(format!("unknown layer kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: u64,
    pub out_channels: u64,
    pub kernel: u64,
    /// Input spatial size.
    pub height: u64,
    pub width: u64,
    pub stride: u64,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, cin: u64, cout: u64, k: u64, h: u64, w: u64, stride: u64) -> Self {
        Self {
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            height: h,
            width: w,
            stride,
        }
    }

    pub fn conv(cin: u64, cout: u64, k: u64, h: u64, w: u64) -> Self {
        Self::new(LayerKind::Conv, cin, cout, k, h, w, 1)
    }

    pub fn dsc(cin: u64, cout: u64, k: u64, h: u64, w: u64) -> Self {
        Self::new(LayerKind::Dsc, cin, cout, k, h, w, 1)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.height,
            self.width,
            self.stride,
        ];
        if dims.contains(&0) {
            return Err(Error::Graph(format!("{} layer has a zero dimension", self.kind.name())));
        }
        let same_channels = matches!(self.kind, LayerKind::Se | LayerKind::Upsample);
        if same_channels && self.in_channels != self.out_channels {
            return Err(Error::Graph(format!(
                "{} layer must keep channels ({} -> {})",
                self.kind.name(),
                self.in_channels,
                self.out_channels
            )));
        }
        Ok(())
    }

    /// Output spatial size `(H, W)`.
    pub fn output_size(&self) -> (u64, u64) {
        match self.kind {
            LayerKind::Upsample => (self.height * self.stride, self.width * self.stride),
            LayerKind::Se => (self.height, self.width),
            _ => (self.height.div_ceil(self.stride), self.width.div_ceil(self.stride)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
}

impl CostReport {
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }

    pub fn gflops(&self) -> f64 {
        self.flops() as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.params as f64 / 1e6
    }
}

impl Add for CostReport {
    type Output = CostReport;

    fn add(self, rhs: Self) -> Self {
        Self {
            params: self.params + rhs.params,
            macs: self.macs + rhs.macs,
        }
    }
}

impl AddAssign for CostReport {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for CostReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "params={} ({:.4} M)\nmacs={}\nflops={} ({:.4} GFLOPs)",
            self.params,
            self.mparams(),
            self.macs,
            self.flops(),
            self.gflops()
        )
    }
}

pub fn layer_cost(spec: &LayerSpec) -> Result<CostReport> {
    spec.validate()?;
    let (cin, cout, k2) = (spec.in_channels, spec.out_channels, spec.kernel * spec.kernel);
    let (ho, wo) = spec.output_size();
    let px = ho * wo;
    Ok(match spec.kind {
        LayerKind::Conv => CostReport {
            params: cout * cin * k2 + cout,
            macs: px * cout * cin * k2,
        },
        LayerKind::Dsc => CostReport {
            params: (cin * k2 + cin) + (cin * cout + cout),
            macs: px * cin * k2 + px * cin * cout,
        },
        LayerKind::Se => {
            // excitation MLP C → C/r → C, then per-pixel channel scaling
            let c = cin;
            let hidden = (c / spec.kernel).max(1);
            CostReport {
                params: 2 * c * hidden + hidden + c,
                macs: 2 * c * hidden + px * c,
            }
        }
        LayerKind::Upsample => CostReport::default(),
        LayerKind::Head => {
            let spatial = CostReport {
                params: cin * cin * k2 + cin,
                macs: px * cin * cin * k2,
            };
            let point = CostReport {
                params: cin * cout + cout,
                macs: px * cin * cout,
            };
            spatial + point
        }
    })
}

/// MACs per output pixel.
pub fn per_pixel_macs(spec: &LayerSpec) -> Result<f64> {
    let (ho, wo) = spec.output_size();
    Ok(layer_cost(spec)?.macs as f64 / (ho * wo) as f64)
}

/// Sums a chain of layers; each layer's input channels must match the
/// previous layer's output channels.
pub fn network_cost(graph: &[LayerSpec]) -> Result<CostReport> {
    for (i, pair) in graph.windows(2).enumerate() {
        if pair[0].out_channels != pair[1].in_channels {
            return Err(Error::Graph(format!(
                "layer {} outputs {} channels but layer {} expects {}",
                i,
                pair[0].out_channels,
                i + 1,
                pair[1].in_channels
            )));
        }
    }
    graph.iter().map(layer_cost).sum()
}

/// Sums independent chains (e.g. the lateral and top-down branches of a
/// feature pyramid).
pub fn branches_cost(branches: &[Vec<LayerSpec>]) -> Result<CostReport> {
    branches.iter().map(|b| network_cost(b)).sum()
}

/// Top-down pyramid: each level `i` (finest first) gets a lateral block
/// mapping `channels[i] → width`, and every coarser level but the top is
/// upsampled ×2 into it. Returns one chain per branch.
pub fn fpn_branches(channels: &[u64], width: u64, h: u64, w: u64, kind: LayerKind) -> Vec<Vec<LayerSpec>> {
    let mut out = Vec::new();
    for (i, &c) in channels.iter().enumerate() {
        let (hi, wi) = ((h >> i).max(1), (w >> i).max(1));
        out.push(vec![LayerSpec::new(kind, c, width, 3, hi, wi, 1)]);
        if i + 1 < channels.len() {
            let (hc, wc) = ((h >> (i + 1)).max(1), (w >> (i + 1)).max(1));
            out.push(vec![LayerSpec::new(LayerKind::Upsample, width, width, 1, hc, wc, 2)]);
        }
    }
    out
}

/// Parses `kind,cin,cout,k,H,W,stride` lines. Blank lines separate branches;
/// `#` starts a comment.
pub fn parse_graph(text: &str) -> Result<Vec<Vec<LayerSpec>>> {
    let mut branches = vec![Vec::new()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if raw.trim().is_empty() && !branches.last().is_some_and(Vec::is_empty) {
                branches.push(Vec::new());
            }
            continue;
        }
        let err = |m: String| Error::Graph(format!("line {}: {m}", i + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", fields.len())));
        }
        let kind: LayerKind = fields[0].parse().map_err(|e: Error| err(e.to_string()))?;
        let mut n = [0u64; 6];
        for (slot, f) in n.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| err(format!("invalid count {f:?}")))?;
        }
        let spec = LayerSpec::new(kind, n[0], n[1], n[2], n[3], n[4], n[5]);
        spec.validate().map_err(|e| err(e.to_string()))?;
        branches.last_mut().expect("non-empty").push(spec);
    }
    if branches.last().is_some_and(Vec::is_empty) {
        branches.pop();
    }
    Ok(branches)
}

pub fn format_graph(branches: &[Vec<LayerSpec>]) -> String {
    branches
        .iter()
        .map(|b| {
            b.iter()
                .map(|s| {
                    format!(
                        "{},{},{},{},{},{},{}\n",
                        s.kind.name(),
                        s.in_channels,
                        s.out_channels,
                        s.kernel,
                        s.height,
                        s.width,
                        s.stride
                    )
                })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::arg("need at least two paired samples"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::arg("log-log fit needs positive samples"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("x samples are all equal"));
    }
    Ok(sxy / sxx)
}
