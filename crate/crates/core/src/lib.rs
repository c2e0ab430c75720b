//! Bit-accurate low-precision arithmetic and a quantized CNN training
//! simulator.
//!
//! Values live in binary64 but are constrained to low-precision grids:
//! fixed point, minifloats, power-of-two, and locally scaled ("context")
//! variants. Training runs the usual conv/pool/ReLU/FC network with every
//! weight, bias, output, gradient and update class quantized per scheme,
//! and a cost model turns operation tallies into time and memory estimates.

pub mod cli;
pub mod context;
pub mod costmodel;
pub mod data;
pub mod error;
pub mod network;
pub mod qformats;
pub mod qtensor;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use qformats::{NumericFormat, RoundingMode, ScaledFormat};
pub use rng::RngStream;
