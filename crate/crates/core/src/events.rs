//! DVS event model, `EVT1` / CSV I/O and binning.
//!
//! `EVT1` layout (little endian, packed):
//!
//! ```text
//! "EVT1" | u16 width | u16 height | u64 count | count × (u64 t | u16 x | u16 y | u8 p)
//! ```
//!
//! The CSV form is a `t,x,y,p` header followed by one decimal record per line.

use std::io::{Read, Write};

use crate::error::{Error, Location, Result};

pub const EVT_MAGIC: &[u8; 4] = b"EVT1";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 13;

/// Default fixed-count bin size.
pub const DEFAULT_BIN_COUNT: usize = 5000;

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    /// Pixel got dimmer.
    Negative = 0,
    /// Pixel got brighter.
    Positive = 1,
}

impl Polarity {
    pub fn from_u8(p: u8) -> Option<Self> {
        match p {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    #[inline]
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Negative => Polarity::Positive,
            Polarity::Positive => Polarity::Negative,
        }
    }
}

/// A single event: microsecond timestamp, pixel column/row, polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

/// Time-ordered events from one sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates coordinates and stably sorts by timestamp.
    pub fn new(width: u16, height: u16, mut events: Vec<Event>) -> Result<Self> {
        for (index, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::EventOutOfGrid {
                    index,
                    x: e.x,
                    y: e.y,
                    width,
                    height,
                });
            }
        }
        if !events.windows(2).all(|w| w[0].t <= w[1].t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    #[inline]
    pub fn width(&self) -> u16 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u16 {
        self.height
    }

    #[inline]
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

/// A contiguous slice of a stream together with its time window.
///
/// `t_end` is the accumulation reference time. The kernel duration is
/// `t_end - t_start`, clamped to at least 1 µs so that bins whose events all
/// share one timestamp still weight them at the reference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventBin<'a> {
    pub events: &'a [Event],
    pub t_start: u64,
    pub t_end: u64,
    pub width: u16,
    pub height: u16,
}

impl<'a> EventBin<'a> {
    pub fn new(
        events: &'a [Event],
        t_start: u64,
        t_end: u64,
        width: u16,
        height: u16,
    ) -> Result<Self> {
        if t_end < t_start {
            return Err(Error::arg(format!(
                "bin ends ({t_end}) before it starts ({t_start})"
            )));
        }
        if let Some(i) = events.iter().position(|e| e.t < t_start || e.t > t_end) {
            return Err(Error::arg(format!(
                "event {i} at t={} outside bin window [{t_start}, {t_end}]",
                events[i].t
            )));
        }
        if let Some(i) = events.windows(2).position(|w| w[0].t > w[1].t) {
            return Err(Error::arg(format!("bin events not time-ordered at index {}", i + 1)));
        }
        Ok(Self {
            events,
            t_start,
            t_end,
            width,
            height,
        })
    }

    /// Kernel normalization duration in microseconds (always ≥ 1).
    #[inline]
    pub fn duration(&self) -> u64 {
        (self.t_end - self.t_start).max(1)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Same window, restricted to events with `t <= t_cut`.
    pub fn truncated(&self, t_cut: u64) -> EventBin<'a> {
        let end = self.events.partition_point(|e| e.t <= t_cut);
        EventBin {
            events: &self.events[..end],
            ..*self
        }
    }
}

/// How a stream is cut into bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    FixedCount(usize),
    FixedTime(u64),
}

impl Binning {
    pub fn apply<'a>(&self, stream: &'a EventStream) -> Result<Vec<EventBin<'a>>> {
        match *self {
            Binning::FixedCount(n) => bin_fixed_count(stream, n),
            Binning::FixedTime(w) => bin_fixed_time(stream, w),
        }
    }
}

impl Default for Binning {
    fn default() -> Self {
        Binning::FixedCount(DEFAULT_BIN_COUNT)
    }
}

/// Cuts the stream into bins of exactly `count` events. A trailing
/// remainder shorter than `count` is dropped.
///
/// The first bin starts at its first event; every later bin starts where the
/// previous one ended. Each bin ends at its last event.
pub fn bin_fixed_count(stream: &EventStream, count: usize) -> Result<Vec<EventBin<'_>>> {
    if count == 0 {
        return Err(Error::arg("fixed-count bin size must be at least 1"));
    }
    let mut bins = Vec::with_capacity(stream.len() / count);
    let mut t_start = stream.events.first().map_or(0, |e| e.t);
    for chunk in stream.events.chunks_exact(count) {
        let t_end = chunk[count - 1].t;
        bins.push(EventBin {
            events: chunk,
            t_start,
            t_end,
            width: stream.width,
            height: stream.height,
        });
        t_start = t_end;
    }
    Ok(bins)
}

/// Cuts the timeline into windows `[k·w, (k+1)·w)` from t = 0 up to the
/// window holding the last event. Empty windows yield empty bins.
pub fn bin_fixed_time(stream: &EventStream, window: u64) -> Result<Vec<EventBin<'_>>> {
    if window == 0 {
        return Err(Error::arg("fixed-time window must be at least 1 µs"));
    }
    let Some(last) = stream.events.last() else {
        return Ok(Vec::new());
    };
    let n_windows = last.t / window + 1;
    let mut bins = Vec::with_capacity(n_windows as usize);
    let mut rest = stream.events.as_slice();
    for k in 0..n_windows {
        let t_start = k * window;
        let t_end = t_start + window;
        let split = rest.partition_point(|e| e.t < t_end);
        let (head, tail) = rest.split_at(split);
        bins.push(EventBin {
            events: head,
            t_start,
            t_end,
            width: stream.width,
            height: stream.height,
        });
        rest = tail;
    }
    Ok(bins)
}

// ── I/O ────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Binary,
    /// CSV carries no sensor size; `None` infers it from the largest
    /// coordinates seen.
    Csv { sensor: Option<(u16, u16)> },
}

pub fn read_events<R: Read>(mut reader: R, format: EventFormat) -> Result<EventStream> {
    match format {
        EventFormat::Binary => {
            let mut buf = Vec::new();
            reader.read_to_end(&mut buf)?;
            decode_binary(&buf)
        }
        EventFormat::Csv { sensor } => read_csv(reader, sensor),
    }
}

pub fn write_events<W: Write>(stream: &EventStream, format: EventFormat, mut writer: W) -> Result<()> {
    match format {
        EventFormat::Binary => writer.write_all(&encode_binary(stream))?,
        EventFormat::Csv { .. } => write_csv(stream, &mut writer)?,
    }
    writer.flush()?;
    Ok(())
}

pub fn events_to_bytes(stream: &EventStream, format: EventFormat) -> Vec<u8> {
    let mut out = Vec::new();
    write_events(stream, format, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn encode_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(EVT_MAGIC);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.as_u8());
    }
    out
}

pub fn decode_binary(buf: &[u8]) -> Result<EventStream> {
    if buf.len() < HEADER_LEN {
        return Err(Error::format(
            Location::Byte(buf.len() as u64),
            format!("truncated header: {} of {HEADER_LEN} bytes", buf.len()),
        ));
    }
    if &buf[..4] != EVT_MAGIC {
        return Err(Error::format(Location::Byte(0), "bad magic, expected \"EVT1\""));
    }
    let width = u16::from_le_bytes([buf[4], buf[5]]);
    let height = u16::from_le_bytes([buf[6], buf[7]]);
    let count = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let payload = &buf[HEADER_LEN..];
    let expected = (count as u128) * RECORD_LEN as u128;
    if payload.len() as u128 != expected {
        return Err(Error::format(
            Location::Byte(HEADER_LEN as u64 + payload.len().min(expected as usize) as u64),
            format!(
                "header declares {count} records ({expected} bytes) but payload has {} bytes",
                payload.len()
            ),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in payload.chunks_exact(RECORD_LEN).enumerate() {
        let offset = (HEADER_LEN + i * RECORD_LEN) as u64;
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::from_u8(rec[12]).ok_or_else(|| {
            Error::format(
                Location::Record(i as u64),
                format!("polarity {} is not 0 or 1 (byte {})", rec[12], offset + 12),
            )
        })?;
        if x >= width || y >= height {
            return Err(Error::format(
                Location::Record(i as u64),
                format!("coordinate ({x}, {y}) outside {width}x{height} (byte {offset})"),
            ));
        }
        events.push(Event { t, x, y, p });
    }
    EventStream::new(width, height, events)
}

fn read_csv<R: Read>(reader: R, sensor: Option<(u16, u16)>) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(Location::Line(1), e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "p"] {
        return Err(Error::format(
            Location::Line(1),
            format!("expected header t,x,y,p, got {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::format(Location::Line(line), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::format(Location::Line(line), format!("missing field {name}")))
        };
        let bad = |name: &str, v: &str| {
            Error::format(Location::Line(line), format!("invalid {name} value {v:?}"))
        };
        let t_s = field(0, "t")?;
        let t: u64 = t_s.parse().map_err(|_| bad("t", t_s))?;
        let x_s = field(1, "x")?;
        let x: u16 = x_s.parse().map_err(|_| bad("x", x_s))?;
        let y_s = field(2, "y")?;
        let y: u16 = y_s.parse().map_err(|_| bad("y", y_s))?;
        let p_s = field(3, "p")?;
        let p = p_s
            .parse::<u8>()
            .ok()
            .and_then(Polarity::from_u8)
            .ok_or_else(|| {
                Error::format(
                    Location::Line(line),
                    format!("polarity {p_s:?} is not 0 or 1 (record {})", events.len()),
                )
            })?;
        if let Some((w, h)) = sensor {
            if x >= w || y >= h {
                return Err(Error::format(
                    Location::Line(line),
                    format!("coordinate ({x}, {y}) outside {w}x{h}"),
                ));
            }
        }
        events.push(Event { t, x, y, p });
    }
    let (width, height) = sensor.unwrap_or_else(|| {
        events.iter().fold((1, 1), |(w, h), e| {
            (w.max(e.x.saturating_add(1)), h.max(e.y.saturating_add(1)))
        })
    });
    EventStream::new(width, height, events)
}

fn write_csv<W: Write>(stream: &EventStream, writer: &mut W) -> std::io::Result<()> {
    writeln!(writer, "t,x,y,p")?;
    for e in &stream.events {
        writeln!(writer, "{},{},{},{}", e.t, e.x, e.y, e.p.as_u8())?;
    }
    Ok(())
}
