use std::fmt;

/// Errors raised anywhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    NonPositiveExtent { l_x: f64, l_z: f64 },
    GridTooSmall { rows: usize, cols: usize },
    RectangleOutOfBody { index: usize },
    NonPositivePermittivity { row: usize, col: usize, value: f64 },
    NonPositiveWavelength(f64),
    UnknownPort { port: usize, available: usize },
    ZeroAmplitude,
    ShapeMismatch(String),
    InvalidConfig(String),
    SingularSystem { column: usize },
    NoConvergence { iterations: usize, residual: f64 },
    IndivisibleChannels { channels: usize, groups: usize },
    ModeOrderingViolation(String),
    MissingTrace,
    ZeroTargetNorm { sample: usize },
    IncompatibleSamples(String),
    EmptyDataset,
    IncompatibleCheckpoint(String),
    Format(String),
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonPositiveExtent { l_x, l_z } => {
                write!(f, "domain extents must be positive (l_x={l_x}, l_z={l_z})")
            }
            Error::GridTooSmall { rows, cols } => {
                write!(f, "grid {rows}x{cols} is too small, need at least 4x4")
            }
            Error::RectangleOutOfBody { index } => {
                write!(f, "rectangle {index} extends past the device body")
            }
            Error::NonPositivePermittivity { row, col, value } => {
                write!(f, "permittivity {value} at ({row}, {col}) is not positive")
            }
            Error::NonPositiveWavelength(l) => write!(f, "wavelength {l} must be positive"),
            Error::UnknownPort { port, available } => {
                write!(f, "port {port} does not exist (device has {available} ports)")
            }
            Error::ZeroAmplitude => write!(f, "source amplitude must be nonzero"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::SingularSystem { column } => {
                write!(f, "system matrix is singular (zero pivot at column {column})")
            }
            Error::NoConvergence { iterations, residual } => write!(
                f,
                "iterative solver did not converge after {iterations} iterations (residual {residual:.3e})"
            ),
            Error::IndivisibleChannels { channels, groups } => {
                write!(f, "{channels} channels cannot be split into {groups} groups")
            }
            Error::ModeOrderingViolation(msg) => write!(f, "mode ordering violated: {msg}"),
            Error::MissingTrace => write!(f, "backward pass requested without a recorded trace"),
            Error::ZeroTargetNorm { sample } => {
                write!(f, "target of sample {sample} has zero norm")
            }
            Error::IncompatibleSamples(msg) => write!(f, "incompatible samples: {msg}"),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::IncompatibleCheckpoint(msg) => write!(f, "incompatible checkpoint: {msg}"),
            Error::Format(msg) => write!(f, "malformed data: {msg}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
