//! Non-neural core of an event-based pupil tracker.
//!
//! The crate covers the full path from raw DVS events to evaluation numbers:
//!
//! - [`events`]: event model, `EVT1`/CSV I/O, fixed-count and fixed-time binning.
//! - [`accumulate`]: event volume, causal event volume and the limited
//!   ("fast") causal event volume, min-max normalization, `FCV1` I/O and
//!   event-processing-time measurement.
//! - [`ellipse`]: `(x, y, a, b, θ)` ellipses, `(sin 2θ, cos 2θ)` rotation
//!   encoding, Gaussian form, augmentation transforms, boundary sampling and
//!   direct least-squares fitting.
//! - [`losses`]: heatmap focal loss, smooth L1, Gaussian Wasserstein loss,
//!   trigonometric and L1 angle losses, training-target generation.
//! - [`decode`]: head decoding, `P_n` / pixel-error metrics and a classical
//!   ellipse detector used as a network stand-in.
//! - [`synth`]: seeded synthetic eye-event generator with ground-truth labels.
//! - [`modelcost`]: parameter / MAC counting for conv, depthwise-separable,
//!   SE, upsample and head blocks.
//!
//! Axis lengths `a`, `b` are full lengths throughout; angles are degrees in
//! `[0, 180)` unless a function says otherwise.

pub mod accumulate;
pub mod decode;
pub mod ellipse;
pub mod error;
pub mod events;
pub mod grid;
pub mod losses;
pub mod modelcost;
pub mod synth;

pub use error::{Error, FitError, Location, Result};
