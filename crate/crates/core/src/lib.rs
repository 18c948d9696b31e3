//! Multispectral pansharpening toolkit.
//!
//! * [`tensor`]: `f32` tensors, a recording tape and the layer operators.
//! * [`imaging`]: rasters, sensor constants, MTF-matched filtering,
//!   decimation and 23-tap interpolation, plus the PSR1 container.
//! * [`fusion`]: the detail-injection (MRA) baselines.
//! * [`metrics`]: SAM, ERGAS, SCC, UIQI, Q2ⁿ, D_λ, D_s and QNR.
//! * [`wald`]: reduced-resolution simulation and dataset splits.
//! * [`model`]: the two-level, two-branch detail-injection network.
//! * [`trainer`]: supervised training, validation and checkpoints.

pub mod error;
pub mod fusion;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod wald;

pub use error::{Error, Result};
