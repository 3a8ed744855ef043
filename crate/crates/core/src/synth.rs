//! Seeded synthetic eye-event generator.
//!
//! A pupil ellipse follows a sinusoidal center path with a linear rotation
//! schedule. Its boundary emits events at a fixed rate, uniform noise is
//! sprinkled over the sensor, and blink intervals suppress boundary events.
//! Polarity follows the boundary's normal velocity: pixels the dark pupil is
//! moving onto dim (negative by default), pixels it leaves brighten.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ellipse::{boundary_point, wrap_degrees, EllipseParams, Label};
use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity, DEFAULT_BIN_COUNT};

/// Every documented scenario key, in file order.
pub const SCENARIO_KEYS: [&str; 19] = [
    "duration_us",
    "width",
    "height",
    "center_x",
    "center_y",
    "amp_x",
    "amp_y",
    "period_us",
    "axis_a",
    "axis_b",
    "theta_deg",
    "theta_rate_deg_s",
    "events_per_ms",
    "noise_rate",
    "blinks",
    "seed",
    "label_every",
    "step_us",
    "leading_polarity",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration_us: u64,
    pub width: u16,
    pub height: u16,
    /// Middle of the center path.
    pub center_x: f64,
    pub center_y: f64,
    /// Peak excursions: `x = cx + amp_x·sin(ωt)`, `y = cy + amp_y·cos(ωt)`.
    pub amp_x: f64,
    pub amp_y: f64,
    pub period_us: f64,
    /// Full axis lengths, `axis_a ≥ axis_b`.
    pub axis_a: f64,
    pub axis_b: f64,
    pub theta_deg: f64,
    pub theta_rate_deg_s: f64,
    /// Boundary events per millisecond.
    pub events_per_ms: f64,
    /// Uniform noise events per millisecond.
    pub noise_rate: f64,
    /// Half-open `[start, end)` intervals without boundary events.
    pub blinks: Vec<(u64, u64)>,
    pub seed: u64,
    /// A label is recorded at the timestamp of every `label_every`-th event.
    pub label_every: usize,
    /// Generation micro-step.
    pub step_us: u64,
    /// Polarity on the edge the pupil is moving onto.
    pub leading_polarity: Polarity,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            duration_us: 1_000_000,
            width: 64,
            height: 64,
            center_x: 32.0,
            center_y: 32.0,
            amp_x: 8.0,
            amp_y: 6.0,
            period_us: 1_000_000.0,
            axis_a: 20.0,
            axis_b: 14.0,
            theta_deg: 30.0,
            theta_rate_deg_s: 20.0,
            events_per_ms: 500.0,
            noise_rate: 0.0,
            blinks: Vec::new(),
            seed: 0,
            label_every: DEFAULT_BIN_COUNT,
            step_us: 100,
            leading_polarity: Polarity::Negative,
        }
    }
}

fn scenario_err(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

impl Scenario {
    /// Pupil at rest for the whole run.
    pub fn stationary() -> Self {
        Self {
            amp_x: 0.0,
            amp_y: 0.0,
            theta_rate_deg_s: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_us == 0 || self.step_us == 0 {
            return Err(scenario_err("duration_us and step_us must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(scenario_err("sensor size must be positive"));
        }
        if self.label_every == 0 {
            return Err(scenario_err("label_every must be positive"));
        }
        let finite = [
            self.center_x,
            self.center_y,
            self.amp_x,
            self.amp_y,
            self.period_us,
            self.axis_a,
            self.axis_b,
            self.theta_deg,
            self.theta_rate_deg_s,
            self.events_per_ms,
            self.noise_rate,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(scenario_err("non-finite scenario value"));
        }
        if self.events_per_ms < 0.0 || self.noise_rate < 0.0 {
            return Err(scenario_err("rates must be non-negative"));
        }
        if self.amp_x < 0.0 || self.amp_y < 0.0 {
            return Err(scenario_err("amplitudes must be non-negative"));
        }
        if !(self.period_us > 0.0) {
            return Err(scenario_err("period_us must be positive"));
        }
        if !(self.axis_b > 0.0 && self.axis_a >= self.axis_b) {
            return Err(scenario_err("axes must satisfy axis_a >= axis_b > 0"));
        }
        for &(s, e) in &self.blinks {
            if s >= e {
                return Err(scenario_err(format!("blink {s}-{e} is empty")));
            }
        }
        // Conservative extent: the ellipse never reaches further than a/2
        // from its center.
        let r = self.axis_a / 2.0;
        let (w, h) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        let x_ok = self.center_x - self.amp_x - r >= 0.0 && self.center_x + self.amp_x + r <= w;
        let y_ok = self.center_y - self.amp_y - r >= 0.0 && self.center_y + self.amp_y + r <= h;
        if !(x_ok && y_ok) {
            return Err(scenario_err(format!(
                "trajectory leaves the {}x{} sensor",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Pupil center at time `t` (µs).
    pub fn center_at(&self, t: f64) -> [f64; 2] {
        let phase = TAU * t / self.period_us;
        [
            self.center_x + self.amp_x * phase.sin(),
            self.center_y + self.amp_y * phase.cos(),
        ]
    }

    fn theta_raw(&self, t: f64) -> f64 {
        self.theta_deg + self.theta_rate_deg_s * t * 1e-6
    }

    /// Ground-truth ellipse at time `t` (µs).
    pub fn ellipse_at(&self, t: f64) -> EllipseParams {
        let [x, y] = self.center_at(t);
        let theta = wrap_degrees(self.theta_raw(t));
        EllipseParams {
            x,
            y,
            a: self.axis_a,
            b: self.axis_b,
            theta: if (self.axis_a - self.axis_b).abs() < crate::ellipse::CIRCLE_EPS {
                0.0
            } else {
                theta
            },
        }
    }

    fn in_blink(&self, t: u64) -> bool {
        self.blinks.iter().any(|&(s, e)| t >= s && t < e)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| scenario_err(format!("invalid value {v:?} for {key}")))
        }
        match key.trim() {
            "duration_us" => self.duration_us = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "center_x" => self.center_x = num(key, value)?,
            "center_y" => self.center_y = num(key, value)?,
            "amp_x" => self.amp_x = num(key, value)?,
            "amp_y" => self.amp_y = num(key, value)?,
            "period_us" => self.period_us = num(key, value)?,
            "axis_a" => self.axis_a = num(key, value)?,
            "axis_b" => self.axis_b = num(key, value)?,
            "theta_deg" => self.theta_deg = num(key, value)?,
            "theta_rate_deg_s" => self.theta_rate_deg_s = num(key, value)?,
            "events_per_ms" => self.events_per_ms = num(key, value)?,
            "noise_rate" => self.noise_rate = num(key, value)?,
            "blinks" => self.blinks = parse_blinks(value)?,
            "seed" => self.seed = num(key, value)?,
            "label_every" => self.label_every = num(key, value)?,
            "step_us" => self.step_us = num(key, value)?,
            "leading_polarity" => {
                self.leading_polarity = match value {
                    "negative" => Polarity::Negative,
                    "positive" => Polarity::Positive,
                    _ => return Err(scenario_err(format!("leading_polarity must be negative or positive, got {value:?}"))),
                }
            }
            other => return Err(scenario_err(format!("unknown scenario key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a flat `key=value` file over the defaults. `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| scenario_err(format!("line {}: expected key=value", i + 1)))?;
            s.set(k, v)
                .map_err(|e| scenario_err(format!("line {}: {e}", i + 1)))?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let blinks = self
            .blinks
            .iter()
            .map(|(s, e)| format!("{s}-{e}"))
            .collect::<Vec<_>>()
            .join(";");
        let pol = match self.leading_polarity {
            Polarity::Negative => "negative",
            Polarity::Positive => "positive",
        };
        let values: [String; 19] = [
            self.duration_us.to_string(),
            self.width.to_string(),
            self.height.to_string(),
            self.center_x.to_string(),
            self.center_y.to_string(),
            self.amp_x.to_string(),
            self.amp_y.to_string(),
            self.period_us.to_string(),
            self.axis_a.to_string(),
            self.axis_b.to_string(),
            self.theta_deg.to_string(),
            self.theta_rate_deg_s.to_string(),
            self.events_per_ms.to_string(),
            self.noise_rate.to_string(),
            blinks,
            self.seed.to_string(),
            self.label_every.to_string(),
            self.step_us.to_string(),
            pol.to_string(),
        ];
        for (k, v) in SCENARIO_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// `start-end;start-end`, empty for none.
fn parse_blinks(v: &str) -> Result<Vec<(u64, u64)>> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|iv| {
            let (s, e) = iv
                .split_once('-')
                .ok_or_else(|| scenario_err(format!("blink {iv:?} is not start-end")))?;
            let parse = |x: &str| {
                x.trim()
                    .parse::<u64>()
                    .map_err(|_| scenario_err(format!("invalid blink bound {x:?}")))
            };
            Ok((parse(s)?, parse(e)?))
        })
        .collect()
}

/// Events due in `[t0, t1)` at `rate` per ms, rounding the running total so
/// the count never drifts by more than one from `rate·t`.
fn due(rate: f64, t0: u64, t1: u64) -> u64 {
    let total = |t: u64| (rate * t as f64 / 1000.0).round() as u64;
    total(t1) - total(t0)
}

/// Generates the event stream and labels for a scenario.
pub fn generate(scenario: &Scenario) -> Result<(EventStream, Vec<Label>)> {
    scenario.validate()?;
    let s = scenario;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (w, h) = (s.width, s.height);
    let mut events = Vec::new();

    let mut t0 = 0u64;
    while t0 < s.duration_us {
        let t1 = (t0 + s.step_us).min(s.duration_us);
        for _ in 0..due(s.events_per_ms, t0, t1) {
            let t = rng.gen_range(t0..t1);
            let phi = rng.gen::<f64>() * TAU;
            let coin: bool = rng.gen();
            if s.in_blink(t) {
                continue;
            }
            let tf = t as f64;
            let e = s.ellipse_at(tf);
            let p = boundary_point(&e, phi);
            let polarity = boundary_polarity(s, tf, phi, coin);
            let x = p[0].round().clamp(0.0, w as f64 - 1.0) as u16;
            let y = p[1].round().clamp(0.0, h as f64 - 1.0) as u16;
            events.push(Event::new(t, x, y, polarity));
        }
        for _ in 0..due(s.noise_rate, t0, t1) {
            let t = rng.gen_range(t0..t1);
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            let p = if rng.gen() { Polarity::Positive } else { Polarity::Negative };
            events.push(Event::new(t, x, y, p));
        }
        t0 = t1;
    }

    let stream = EventStream::new(w, h, events)?;
    let labels = stream
        .events()
        .iter()
        .skip(s.label_every - 1)
        .step_by(s.label_every)
        .map(|ev| Label {
            t_end: ev.t,
            ellipse: s.ellipse_at(ev.t as f64),
        })
        .collect();
    log::debug!("generated {} events for seed {}", stream.len(), s.seed);
    Ok((stream, labels))
}

/// Sign of the boundary's outward normal velocity at curve parameter `phi`.
/// Outward motion means the pupil is moving onto the pixel (leading edge).
fn boundary_polarity(s: &Scenario, t: f64, phi: f64, coin: bool) -> Polarity {
    const H: f64 = 1.0;
    let at = |tt: f64| {
        // unwrapped angle so the finite difference never straddles the seam
        let [x, y] = s.center_at(tt);
        let e = EllipseParams {
            x,
            y,
            a: s.axis_a,
            b: s.axis_b,
            theta: s.theta_raw(tt),
        };
        boundary_point(&e, phi)
    };
    let (p0, p1) = (at(t - H), at(t + H));
    let vel = [(p1[0] - p0[0]) / (2.0 * H), (p1[1] - p0[1]) / (2.0 * H)];
    // outward normal at phi: rotate the local (b cos φ, a sin φ) direction
    let (sn, cs) = s.theta_raw(t).to_radians().sin_cos();
    let (nu, nv) = (s.axis_b * phi.cos(), s.axis_a * phi.sin());
    let normal = [cs * nu - sn * nv, sn * nu + cs * nv];
    let dot = vel[0] * normal[0] + vel[1] * normal[1];
    if dot.abs() < 1e-12 {
        if coin {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    } else if dot > 0.0 {
        s.leading_polarity
    } else {
        s.leading_polarity.flipped()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario {
            duration_us: 40_000,
            ..Scenario::default()
        }
    }

    #[test]
    fn default_is_valid() {
        Scenario::default().validate().unwrap();
        Scenario::stationary().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_bounds_trajectory() {
        let s = Scenario {
            amp_x: 30.0,
            ..Scenario::default()
        };
        assert!(matches!(s.validate(), Err(Error::Scenario(_))));
        assert!(generate(&s).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for (k, v) in [
            ("events_per_ms", "-1"),
            ("axis_b", "30"),
            ("blinks", "5-5"),
            ("period_us", "0"),
            ("label_every", "0"),
        ] {
            let mut s = Scenario::default();
            s.set(k, v).unwrap();
            assert!(s.validate().is_err(), "{k}={v}");
        }
        assert!(Scenario::default().set("nope", "1").is_err());
        assert!(Scenario::default().set("width", "x").is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut s = small();
        s.blinks = vec![(1000, 2000), (5000, 8000)];
        s.leading_polarity = Polarity::Positive;
        s.theta_deg = 12.5;
        let back = Scenario::from_kv(&s.to_kv()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn kv_comments_and_defaults() {
        let s = Scenario::from_kv("# comment\nseed = 7\n\nnoise_rate=3 # inline\n").unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.noise_rate, 3.0);
        assert_eq!(s.width, 64);
        assert!(Scenario::from_kv("seed").is_err());
    }

    #[test]
    fn deterministic() {
        let s = Scenario {
            noise_rate: 20.0,
            ..small()
        };
        let (a, la) = generate(&s).unwrap();
        let (b, lb) = generate(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, _) = generate(&Scenario { seed: 1, ..s }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn event_count_matches_rate() {
        let s = small();
        let (stream, labels) = generate(&s).unwrap();
        assert_eq!(stream.len(), 20_000);
        assert_eq!(labels.len(), 4);
        assert_eq!(labels[0].t_end, stream.events()[4999].t);
    }

    #[test]
    fn blink_has_no_pupil_events() {
        let s = Scenario {
            blinks: vec![(10_000, 20_000)],
            ..small()
        };
        let (stream, _) = generate(&s).unwrap();
        assert!(stream.events().iter().all(|e| e.t < 10_000 || e.t >= 20_000));
    }

    #[test]
    fn stationary_events_hug_boundary() {
        let s = Scenario {
            duration_us: 10_000,
            ..Scenario::stationary()
        };
        let (stream, _) = generate(&s).unwrap();
        let e = s.ellipse_at(0.0);
        let pts: Vec<[f64; 2]> = crate::ellipse::sample_boundary(&e, 4000);
        for ev in stream.events().iter().take(500) {
            let d = pts
                .iter()
                .map(|p| (p[0] - ev.x as f64).hypot(p[1] - ev.y as f64))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1.0, "{ev:?} at {d}");
        }
    }

    #[test]
    fn polarity_follows_motion() {
        // moving right: right edge leads (negative), left edge trails
        let s = Scenario {
            amp_y: 0.0,
            theta_rate_deg_s: 0.0,
            ..Scenario::default()
        };
        assert_eq!(boundary_polarity(&s, 0.0, 0.0, true), Polarity::Negative);
        assert_eq!(boundary_polarity(&s, 0.0, std::f64::consts::PI, true), Polarity::Positive);
        let still = Scenario::stationary();
        assert_eq!(boundary_polarity(&still, 0.0, 0.0, true), Polarity::Positive);
        assert_eq!(boundary_polarity(&still, 0.0, 0.0, false), Polarity::Negative);
    }
}
