use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {0}")]
    NonFinite(f64),

    #[error("format payload of {bits} bits exceeds the cap of {cap} bits")]
    WidthCap { bits: u32, cap: u32 },

    #[error("invalid format: {0}")]
    InvalidFormat(String),

    #[error("stochastic rounding requested without an RNG stream")]
    MissingRng,

    #[error("empty collection")]
    EmptyCollection,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("element {index} = {value} is not a power of two (or zero)")]
    NotPowerOfTwo { index: usize, value: f64 },

    #[error("element {index} = {value} is not representable in {format}")]
    NotRepresentable { index: usize, value: f64, format: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: truncated at byte offset {offset} (expected {expected} bytes, found {actual})", path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
        offset: u64,
    },

    #[error("{}: bad label byte {byte} at offset {offset}", path.display())]
    BadLabel { path: PathBuf, offset: u64, byte: u8 },

    #[error("cannot draw {requested} samples of class {class}: only {available} available")]
    Stratification {
        requested: usize,
        class: usize,
        available: usize,
    },

    #[error("cost table has no entry for {0}")]
    MissingCostEntry(String),

    #[error("unknown scheme '{0}'")]
    UnknownScheme(String),

    #[error("scheme/topology mismatch: {0}")]
    Topology(String),

    #[error("forward cache missing or stale")]
    CacheMissing,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
