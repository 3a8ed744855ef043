//! Event bins to two-channel representations.
//!
//! Three accumulators share the triangular kernel `max(1 - |τ|, 0)` with
//! `τ = (t_ref - t_i) / Δt`:
//!
//! - **volume**: no causality gate, so events after `t_ref` contribute.
//! - **causal**: Heaviside-gated kernel, only events at or before `t_ref`.
//! - **fast causal**: causal, but each pixel/polarity stops accumulating once
//!   the next contribution would push it past a limit `l`.
//!
//! Sums are carried in `f64`. `FCV1` files store `f32`.

use std::hint::black_box;
use std::io::{Read, Write};
use std::time::Instant;

use crate::error::{Error, Location, Result};
use crate::events::{Binning, EventBin, EventStream, Polarity};
use crate::grid::Grid;

pub const FCV_MAGIC: &[u8; 4] = b"FCV1";
const FCV_HEADER_LEN: usize = 10;
const DTYPE_F32: u8 = 0;

/// Default fast-causal limit.
pub const DEFAULT_LIMIT: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub width: usize,
    pub height: usize,
    pub v_pos: Grid,
    pub v_neg: Grid,
    /// Reference time of the accumulation, microseconds.
    pub t_ref: u64,
}

impl Representation {
    pub fn zeros(width: usize, height: usize, t_ref: u64) -> Self {
        Self {
            width,
            height,
            v_pos: Grid::zeros(width, height),
            v_neg: Grid::zeros(width, height),
            t_ref,
        }
    }

    pub fn channel(&self, p: Polarity) -> &Grid {
        match p {
            Polarity::Positive => &self.v_pos,
            Polarity::Negative => &self.v_neg,
        }
    }

    /// `|v_pos| + |v_neg|` per pixel.
    pub fn combined(&self) -> Grid {
        let data = self
            .v_pos
            .as_slice()
            .iter()
            .zip(self.v_neg.as_slice())
            .map(|(p, n)| p.abs() + n.abs())
            .collect();
        Grid::from_vec(self.width, self.height, data).expect("channel shapes match")
    }

    pub fn max_value(&self) -> f64 {
        self.v_pos
            .as_slice()
            .iter()
            .chain(self.v_neg.as_slice())
            .copied()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Volume,
    Causal,
    FastCausal,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Volume, Method::Causal, Method::FastCausal];

    pub fn name(self) -> &'static str {
        match self {
            Method::Volume => "volume",
            Method::Causal => "causal",
            Method::FastCausal => "fast-causal",
        }
    }
}

/// What the fast-causal accumulator does with a contribution that would
/// overshoot the limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverflowMode {
    /// Drop the whole contribution.
    #[default]
    Skip,
    /// Add only the part that fits under the limit.
    Clip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccumulationConfig {
    pub method: Method,
    pub limit: f64,
    pub overflow: OverflowMode,
    pub normalize: bool,
}

impl Default for AccumulationConfig {
    fn default() -> Self {
        Self {
            method: Method::FastCausal,
            limit: DEFAULT_LIMIT,
            overflow: OverflowMode::Skip,
            normalize: false,
        }
    }
}

impl AccumulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method == Method::FastCausal && !(self.limit > 0.0) {
            return Err(Error::arg(format!("limit must be > 0, got {}", self.limit)));
        }
        Ok(())
    }
}

/// `H(τ) · max(1 - |τ|, 0)` with `H(0) = 1`.
#[inline]
pub fn kernel(tau: f64) -> f64 {
    if tau >= 0.0 {
        (1.0 - tau).max(0.0)
    } else {
        0.0
    }
}

#[inline]
fn tau(t_ref: u64, t: u64, dt: f64) -> f64 {
    (t_ref as f64 - t as f64) / dt
}

fn check_grid(bin: &EventBin<'_>) -> Result<()> {
    if let Some((index, e)) = bin
        .events
        .iter()
        .enumerate()
        .find(|(_, e)| e.x >= bin.width || e.y >= bin.height)
    {
        return Err(Error::EventOutOfGrid {
            index,
            x: e.x,
            y: e.y,
            width: bin.width,
            height: bin.height,
        });
    }
    Ok(())
}

/// Scatters one weight per event into the polarity grids. `update` folds a
/// weight into a pixel's running value; events are visited in stream order.
#[inline(always)]
fn scatter<W, U>(bin: &EventBin<'_>, t_ref: u64, weight: W, update: U) -> Result<Representation>
where
    W: Fn(f64) -> f64,
    U: Fn(f64, f64) -> f64,
{
    check_grid(bin)?;
    let w = bin.width as usize;
    let mut rep = Representation::zeros(w, bin.height as usize, t_ref);
    let dt = bin.duration() as f64;
    {
        // indexed by polarity: no branch per event
        let channels = [rep.v_neg.as_mut_slice(), rep.v_pos.as_mut_slice()];
        for e in bin.events {
            let slot = &mut channels[e.p.as_u8() as usize][e.y as usize * w + e.x as usize];
            *slot = update(*slot, weight(tau(t_ref, e.t, dt)));
        }
    }
    Ok(rep)
}

/// Causal event volume at the bin end.
pub fn accumulate_causal(bin: &EventBin<'_>) -> Result<Representation> {
    accumulate_causal_at(bin, bin.t_end)
}

/// Causal event volume at an arbitrary reference time, using the bin's Δt.
pub fn accumulate_causal_at(bin: &EventBin<'_>, t_ref: u64) -> Result<Representation> {
    scatter(bin, t_ref, kernel, |v, c| v + c)
}

/// Non-causal event volume: events on both sides of `t_ref` contribute.
pub fn accumulate_volume(bin: &EventBin<'_>, t_ref: u64) -> Result<Representation> {
    if t_ref < bin.t_start || t_ref > bin.t_end {
        return Err(Error::arg(format!(
            "reference time {t_ref} outside bin [{}, {}]",
            bin.t_start, bin.t_end
        )));
    }
    scatter(bin, t_ref, |tau| (1.0 - tau.abs()).max(0.0), |v, c| v + c)
}

/// Plain per-pixel event counts; `t_ref` is the bin end.
pub fn event_counts(bin: &EventBin<'_>) -> Result<Representation> {
    scatter(bin, bin.t_end, |_| 1.0, |v, c| v + c)
}

/// Limited causal event volume at the bin end.
pub fn accumulate_fast_causal(
    bin: &EventBin<'_>,
    limit: f64,
    mode: OverflowMode,
) -> Result<Representation> {
    accumulate_fast_causal_at(bin, bin.t_end, limit, mode)
}

/// Limited causal event volume at an arbitrary reference time.
///
/// Skip mode drops any contribution that would push a pixel past the limit;
/// clip mode adds only the remaining headroom, i.e. `min(V + c, l)`. Both are
/// written as selects rather than branches: whether a pixel has saturated is
/// unpredictable per event, and a mispredicted branch costs more than the
/// kernel evaluation it would skip.
pub fn accumulate_fast_causal_at(
    bin: &EventBin<'_>,
    t_ref: u64,
    limit: f64,
    mode: OverflowMode,
) -> Result<Representation> {
    if !(limit > 0.0) {
        return Err(Error::arg(format!("limit must be > 0, got {limit}")));
    }
    match mode {
        OverflowMode::Skip => scatter(bin, t_ref, kernel, |v, c| {
            let next = v + c;
            if next <= limit {
                next
            } else {
                v
            }
        }),
        OverflowMode::Clip => scatter(bin, t_ref, kernel, |v, c| (v + c).min(limit)),
    }
}

/// Dispatches on the configured method. The volume method is evaluated at
/// the bin midpoint; the causal methods at the bin end.
pub fn accumulate(bin: &EventBin<'_>, config: &AccumulationConfig) -> Result<Representation> {
    config.validate()?;
    let rep = match config.method {
        Method::Volume => {
            let mid = bin.t_start + (bin.t_end - bin.t_start) / 2;
            let mut rep = accumulate_volume(bin, mid)?;
            rep.t_ref = bin.t_end;
            rep
        }
        Method::Causal => accumulate_causal(bin)?,
        Method::FastCausal => accumulate_fast_causal(bin, config.limit, config.overflow)?,
    };
    Ok(if config.normalize {
        normalize_minmax(&rep)
    } else {
        rep
    })
}

/// Per-channel min-max scaling to `[0, 1]`; constant channels become zero.
pub fn normalize_minmax(rep: &Representation) -> Representation {
    fn scale(g: &Grid) -> Grid {
        let mut out = g.clone();
        match g.min_max() {
            Some((lo, hi)) if hi > lo => {
                let range = hi - lo;
                out.as_mut_slice().iter_mut().for_each(|v| *v = (*v - lo) / range);
            }
            _ => out.as_mut_slice().iter_mut().for_each(|v| *v = 0.0),
        }
        out
    }
    Representation {
        width: rep.width,
        height: rep.height,
        v_pos: scale(&rep.v_pos),
        v_neg: scale(&rep.v_neg),
        t_ref: rep.t_ref,
    }
}

// ── FCV1 ───────────────────────────────────────────────────────────────────

pub fn write_representation<W: Write>(rep: &Representation, mut writer: W) -> Result<()> {
    writer.write_all(&encode_representation(rep)?)?;
    writer.flush()?;
    Ok(())
}

pub fn encode_representation(rep: &Representation) -> Result<Vec<u8>> {
    let (w, h) = (
        u16::try_from(rep.width).map_err(|_| Error::arg("width exceeds u16"))?,
        u16::try_from(rep.height).map_err(|_| Error::arg("height exceeds u16"))?,
    );
    let mut out = Vec::with_capacity(FCV_HEADER_LEN + 8 * rep.width * rep.height);
    out.extend_from_slice(FCV_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.push(2);
    out.push(DTYPE_F32);
    for g in [&rep.v_pos, &rep.v_neg] {
        for &v in g.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads an `FCV1` file. The format has no reference time; `t_ref` is 0.
pub fn read_representation<R: Read>(mut reader: R) -> Result<Representation> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    decode_representation(&buf)
}

pub fn decode_representation(buf: &[u8]) -> Result<Representation> {
    if buf.len() < FCV_HEADER_LEN {
        return Err(Error::format(Location::Byte(buf.len() as u64), "truncated FCV1 header"));
    }
    if &buf[..4] != FCV_MAGIC {
        return Err(Error::format(Location::Byte(0), "bad magic, expected \"FCV1\""));
    }
    let w = u16::from_le_bytes([buf[4], buf[5]]) as usize;
    let h = u16::from_le_bytes([buf[6], buf[7]]) as usize;
    if buf[8] != 2 {
        return Err(Error::format(Location::Byte(8), format!("expected 2 channels, got {}", buf[8])));
    }
    if buf[9] != DTYPE_F32 {
        return Err(Error::format(Location::Byte(9), format!("unsupported dtype tag {}", buf[9])));
    }
    let payload = &buf[FCV_HEADER_LEN..];
    if payload.len() != 8 * w * h {
        return Err(Error::format(
            Location::Byte(FCV_HEADER_LEN as u64),
            format!("payload has {} bytes, expected {}", payload.len(), 8 * w * h),
        ));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let pos: Vec<f64> = values.by_ref().take(w * h).collect();
    let neg: Vec<f64> = values.collect();
    Ok(Representation {
        width: w,
        height: h,
        v_pos: Grid::from_vec(w, h, pos)?,
        v_neg: Grid::from_vec(w, h, neg)?,
        t_ref: 0,
    })
}

// ── Event processing time ──────────────────────────────────────────────────

/// Per-representation wall-clock cost of binning plus accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct EptReport {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl EptReport {
    pub fn from_samples(mut samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::arg("no EPT samples"));
        }
        samples_ms.sort_by(f64::total_cmp);
        let n = samples_ms.len();
        let rank = |q: f64| samples_ms[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        Ok(Self {
            samples: n,
            mean_ms: samples_ms.iter().sum::<f64>() / n as f64,
            p50_ms: rank(0.5),
            p95_ms: rank(0.95),
        })
    }
}

/// Times `repetitions` passes of binning + accumulation over the stream.
/// Each sample is one representation: its accumulation time plus its share
/// of that pass's binning time.
pub fn measure_ept(
    stream: &EventStream,
    binning: Binning,
    config: &AccumulationConfig,
    repetitions: usize,
) -> Result<EptReport> {
    if stream.is_empty() {
        return Err(Error::arg("cannot measure EPT on an empty stream"));
    }
    if repetitions == 0 {
        return Err(Error::arg("repetitions must be at least 1"));
    }
    config.validate()?;
    let mut samples = Vec::new();
    for _ in 0..repetitions {
        samples.extend(ept_pass(stream, binning, config)?);
    }
    EptReport::from_samples(samples)
}

/// One timed pass; returns per-representation samples in milliseconds.
pub fn ept_pass(
    stream: &EventStream,
    binning: Binning,
    config: &AccumulationConfig,
) -> Result<Vec<f64>> {
    let start = Instant::now();
    let bins = binning.apply(black_box(stream))?;
    let bin_ms = start.elapsed().as_secs_f64() * 1e3;
    if bins.is_empty() {
        return Err(Error::arg("binning produced no representations"));
    }
    let share = bin_ms / bins.len() as f64;
    let mut out = Vec::with_capacity(bins.len());
    for bin in &bins {
        let t0 = Instant::now();
        let rep = accumulate(black_box(bin), config)?;
        black_box(&rep);
        out.push(share + t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn pos(t: u64, x: u16, y: u16) -> Event {
        Event::new(t, x, y, Polarity::Positive)
    }

    /// Three positive events at 2.2, 2.7, 2.9 ms on one pixel, bin [2.0, 3.0] ms.
    fn fig3_events() -> Vec<Event> {
        vec![pos(2200, 1, 1), pos(2700, 1, 1), pos(2900, 1, 1)]
    }

    fn bin(events: &[Event], t_start: u64, t_end: u64) -> EventBin<'_> {
        EventBin::new(events, t_start, t_end, 4, 4).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(0.0), 1.0);
        assert!((kernel(0.3) - 0.7).abs() < 1e-15);
        assert_eq!(kernel(-0.1), 0.0);
        assert_eq!(kernel(1.5), 0.0);
        assert_eq!(kernel(1.0), 0.0);
    }

    #[test]
    fn single_event_at_bin_end() {
        let ev = [pos(500, 2, 3)];
        let rep = accumulate_causal(&bin(&ev, 0, 500)).unwrap();
        assert_eq!(rep.v_pos.get(3, 2), 1.0);
        assert_eq!(rep.v_neg.sum(), 0.0);
        assert_eq!(rep.t_ref, 500);
    }

    #[test]
    fn causal_hand_value() {
        let ev = fig3_events();
        let rep = accumulate_causal(&bin(&ev, 2000, 3000)).unwrap();
        assert!((rep.v_pos.get(1, 1) - 1.8).abs() < 1e-12);
    }

    #[test]
    fn volume_hand_value_and_future_influence() {
        let ev = fig3_events();
        let b = bin(&ev, 2000, 3000);
        let rep = accumulate_volume(&b, 2000).unwrap();
        assert!((rep.v_pos.get(1, 1) - 1.2).abs() < 1e-12);

        let one = [pos(1300, 0, 0)];
        let rep = accumulate_volume(&bin(&one, 0, 1000 + 1000), 1000).unwrap();
        // Δt = 2000 here; τ = -0.15
        assert!((rep.v_pos.get(0, 0) - 0.85).abs() < 1e-12);

        let one = [pos(1300, 0, 0)];
        let b = EventBin::new(&one, 0, 1300, 4, 4).unwrap();
        let t_ref = 1300 - 390; // event sits 0.3·Δt after t_ref
        let rep = accumulate_volume(&b, t_ref).unwrap();
        assert!((rep.v_pos.get(0, 0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn volume_at_end_equals_causal() {
        let ev = fig3_events();
        let b = bin(&ev, 2000, 3000);
        assert_eq!(accumulate_volume(&b, 3000).unwrap(), accumulate_causal(&b).unwrap());
        assert!(accumulate_volume(&b, 3001).is_err());
    }

    #[test]
    fn fast_causal_skip_and_clip_traces() {
        let ev = fig3_events();
        let b = bin(&ev, 2000, 3000);
        let skip = accumulate_fast_causal(&b, 1.0, OverflowMode::Skip).unwrap();
        assert!((skip.v_pos.get(1, 1) - 0.9).abs() < 1e-12);
        let wide = accumulate_fast_causal(&b, 10.0, OverflowMode::Skip).unwrap();
        assert_eq!(wide, accumulate_causal(&b).unwrap());
        let clip = accumulate_fast_causal(&b, 0.5, OverflowMode::Clip).unwrap();
        assert!((clip.v_pos.get(1, 1) - 0.5).abs() < 1e-12);
        assert!(accumulate_fast_causal(&b, 0.0, OverflowMode::Skip).is_err());
        assert!(accumulate_fast_causal(&b, -1.0, OverflowMode::Clip).is_err());
    }

    #[test]
    fn empty_bin_is_all_zero() {
        let b = bin(&[], 0, 10);
        for rep in [
            accumulate_causal(&b).unwrap(),
            accumulate_volume(&b, 5).unwrap(),
            accumulate_fast_causal(&b, 25.0, OverflowMode::Skip).unwrap(),
        ] {
            assert_eq!(rep.max_value(), 0.0);
        }
    }

    #[test]
    fn out_of_grid_event_is_reported() {
        let ev = [pos(1, 0, 0), pos(2, 9, 0)];
        let b = EventBin { events: &ev, t_start: 0, t_end: 2, width: 4, height: 4 };
        match accumulate_causal(&b) {
            Err(Error::EventOutOfGrid { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn minmax_normalization() {
        let mut rep = Representation::zeros(3, 1, 0);
        rep.v_pos = Grid::from_vec(3, 1, vec![0.0, 5.0, 25.0]).unwrap();
        rep.v_neg = Grid::filled(3, 1, 4.0);
        let n = normalize_minmax(&rep);
        assert_eq!(n.v_pos.as_slice(), &[0.0, 0.2, 1.0]);
        assert_eq!(n.v_neg.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn fcv_round_trip_and_errors() {
        let ev = fig3_events();
        let rep = accumulate_causal(&bin(&ev, 2000, 3000)).unwrap();
        let bytes = encode_representation(&rep).unwrap();
        assert_eq!(bytes.len(), 10 + 2 * 16 * 4);
        let back = decode_representation(&bytes).unwrap();
        assert_eq!(back.v_pos.get(1, 1), 1.8f32 as f64);
        assert!(decode_representation(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[9] = 1;
        assert!(decode_representation(&bad).is_err());
    }

    #[test]
    fn ept_report_basics() {
        let events: Vec<Event> = (0..50).map(|i| pos(i * 10, (i % 4) as u16, 0)).collect();
        let s = EventStream::new(4, 4, events).unwrap();
        let r = measure_ept(&s, Binning::FixedCount(10), &AccumulationConfig::default(), 1).unwrap();
        assert_eq!(r.samples, 5);
        assert!(r.mean_ms > 0.0 && r.p95_ms >= r.p50_ms);
        assert!(measure_ept(&EventStream::empty(4, 4), Binning::FixedCount(10), &AccumulationConfig::default(), 1).is_err());
    }

    #[test]
    fn percentiles_are_nearest_rank() {
        let r = EptReport::from_samples((1..=20).map(f64::from).collect()).unwrap();
        assert_eq!(r.p50_ms, 10.0);
        assert_eq!(r.p95_ms, 19.0);
        assert_eq!(r.mean_ms, 10.5);
    }
}
