use std::fmt;

use thiserror::Error;

/// Position inside an input file, used by format errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(u64),
    Record(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Byte(b) => write!(f, "byte {b}"),
            Location::Line(l) => write!(f, "line {l}"),
            Location::Record(r) => write!(f, "record {r}"),
        }
    }
}

/// Reasons a direct ellipse fit can fail.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least 5 points, got {got}")]
    InsufficientPoints { got: usize },
    #[error("points are degenerate (collinear or coincident)")]
    Degenerate,
    #[error("best-fit conic is not an ellipse")]
    NotAnEllipse,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at {location}: {message}")]
    Format { location: Location, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("event {index} at ({x}, {y}) lies outside the {width}x{height} grid")]
    EventOutOfGrid {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },

    #[error("ellipse fit failed: {0}")]
    Fit(#[from] FitError),

    #[error("degenerate rotation prediction: zero-length (sin 2θ, cos 2θ) vector")]
    DegenerateRotation,

    #[error("decode failed: {0}")]
    Decode(String),

    #[error("detection failed: {active} active pixels, need at least {required}")]
    DetectionFailed { active: usize, required: usize },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(location: Location, message: impl Into<String>) -> Self {
        Error::Format {
            location,
            message: message.into(),
        }
    }

    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
